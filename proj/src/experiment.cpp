#include "glua/experiment.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>

#include "glua/checkpoint.hpp"

namespace glua::cli {

SpecError::SpecError(const std::string& what, std::size_t line)
    : std::invalid_argument(line ? "spec line " + std::to_string(line) + ": " + what : "spec: " + what),
      line_(line) {}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename U>
U parse_number(std::string_view text, std::string_view key) {
  U value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw std::invalid_argument("invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

bool parse_bool(std::string_view text, std::string_view key) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw std::invalid_argument("expected true or false for " + std::string(key));
}

struct Field {
  std::string_view key;
  std::function<std::string(const ExperimentSpec&)> get;
  std::function<void(ExperimentSpec&, std::string_view)> set;
};

template <typename U>
Field number_field(std::string_view key, U ExperimentSpec::*member) {
  return {key,
          [member](const ExperimentSpec& s) {
            if constexpr (std::is_floating_point_v<U>) {
              return format_double(s.*member);
            } else {
              return std::to_string(s.*member);
            }
          },
          [member, key](ExperimentSpec& s, std::string_view v) { s.*member = parse_number<U>(v, key); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"task", [](const ExperimentSpec& s) { return std::string(s.task == Task::lm ? "lm" : "classify"); },
                 [](ExperimentSpec& s, std::string_view v) {
                   if (v == "classify") s.task = Task::classify;
                   else if (v == "lm") s.task = Task::lm;
                   else throw std::invalid_argument("task must be classify or lm");
                 }});
    f.push_back({"variant",
                 [](const ExperimentSpec& s) {
                   switch (s.variant) {
                     case VariantChoice::baseline: return std::string("baseline");
                     case VariantChoice::glu: return std::string("glu");
                     case VariantChoice::both: break;
                   }
                   return std::string("both");
                 },
                 [](ExperimentSpec& s, std::string_view v) {
                   if (v == "baseline") s.variant = VariantChoice::baseline;
                   else if (v == "glu") s.variant = VariantChoice::glu;
                   else if (v == "both") s.variant = VariantChoice::both;
                   else throw std::invalid_argument("variant must be baseline, glu or both");
                 }});
    f.push_back(number_field("n_layers", &ExperimentSpec::n_layers));
    f.push_back(number_field("d_model", &ExperimentSpec::d_model));
    f.push_back(number_field("n_heads", &ExperimentSpec::n_heads));
    f.push_back(number_field("ffn_hidden", &ExperimentSpec::ffn_hidden));
    f.push_back({"final_norm", [](const ExperimentSpec& s) { return std::string(s.final_norm ? "true" : "false"); },
                 [](ExperimentSpec& s, std::string_view v) { s.final_norm = parse_bool(v, "final_norm"); }});
    f.push_back(number_field("n_classes", &ExperimentSpec::n_classes));
    f.push_back(number_field("image_size", &ExperimentSpec::image_size));
    f.push_back(number_field("patch_size", &ExperimentSpec::patch_size));
    f.push_back(number_field("n_samples", &ExperimentSpec::n_samples));
    f.push_back(number_field("noise", &ExperimentSpec::noise));
    f.push_back(number_field("context", &ExperimentSpec::context));
    f.push_back(number_field("text_chars", &ExperimentSpec::text_chars));
    f.push_back({"data_path", [](const ExperimentSpec& s) { return s.data_path; },
                 [](ExperimentSpec& s, std::string_view v) { s.data_path = std::string(v); }});
    f.push_back(number_field("val_fraction", &ExperimentSpec::val_fraction));
    f.push_back(number_field("lr_max", &ExperimentSpec::lr_max));
    f.push_back(number_field("lr_min", &ExperimentSpec::lr_min));
    f.push_back(number_field("weight_decay", &ExperimentSpec::weight_decay));
    f.push_back(number_field("beta1", &ExperimentSpec::beta1));
    f.push_back(number_field("beta2", &ExperimentSpec::beta2));
    f.push_back(number_field("eps", &ExperimentSpec::eps));
    f.push_back(number_field("batch_size", &ExperimentSpec::batch_size));
    f.push_back(number_field("epochs", &ExperimentSpec::epochs));
    f.push_back({"grad_clip",
                 [](const ExperimentSpec& s) { return s.grad_clip ? format_double(*s.grad_clip) : std::string("none"); },
                 [](ExperimentSpec& s, std::string_view v) {
                   if (v == "none") s.grad_clip.reset();
                   else s.grad_clip = parse_number<double>(v, "grad_clip");
                 }});
    f.push_back(number_field("seed", &ExperimentSpec::seed));
    f.push_back(number_field("init_seed", &ExperimentSpec::init_seed));
    f.push_back(number_field("data_seed", &ExperimentSpec::data_seed));
    f.push_back({"output_dir", [](const ExperimentSpec& s) { return s.output_dir; },
                 [](ExperimentSpec& s, std::string_view v) { s.output_dir = std::string(v); }});
    return f;
  }();
  return table;
}

}  // namespace

ExperimentSpec parse_spec(std::string_view text) {
  ExperimentSpec spec;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw SpecError("expected key = value", line_no);
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw SpecError("unknown key '" + std::string(key) + "'", line_no);
    if (!seen.insert(std::string(key)).second) throw SpecError("duplicate key '" + std::string(key) + "'", line_no);
    try {
      it->set(spec, value);
    } catch (const std::invalid_argument& e) {
      throw SpecError(e.what(), line_no);
    }
  }
  return spec;
}

std::string format_spec(const ExperimentSpec& spec) {
  std::string out;
  for (const Field& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(spec);
    out += '\n';
  }
  return out;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open spec file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_spec(text);
}

void ExperimentSpec::validate() const {
  try {
    for (Variant v : variants()) model_config(v).validate();
    train_config().validate();
  } catch (const std::invalid_argument& e) {
    throw SpecError(e.what(), 0);
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw SpecError("val_fraction must lie in [0, 1)", 0);
  for (const std::string* path : {&data_path, &output_dir}) {
    if (path->find_first_of("#\n") != std::string::npos) throw SpecError("paths may not contain '#' or newlines", 0);
  }
  if (task == Task::classify) {
    if (patch_size == 0 || image_size % patch_size != 0) throw SpecError("patch_size must divide image_size", 0);
    if (data_path.empty() && (n_classes > 16 || n_samples == 0)) {
      throw SpecError("synthetic images need 1..16 classes and at least one sample", 0);
    }
    if (!data_path.empty() && image_size != 32) throw SpecError("CIFAR-10 files hold 32x32 images; set image_size = 32", 0);
  } else if (data_path.empty() && text_chars < context + 1) {
    throw SpecError("text_chars must be at least context + 1", 0);
  }
}

ModelConfig ExperimentSpec::model_config(Variant v) const {
  ModelConfig cfg;
  cfg.n_layers = n_layers;
  cfg.d_model = d_model;
  cfg.n_heads = n_heads;
  cfg.ffn_hidden = ffn_hidden;
  cfg.variant = v;
  cfg.final_norm = final_norm;
  if (task == Task::classify) {
    const std::size_t grid = patch_size ? image_size / patch_size : 0;
    cfg.task = ClassifyTask{n_classes, grid * grid, patch_size * patch_size * 3};
  } else {
    cfg.task = LmTask{data::kByteVocab, context};
  }
  return cfg;
}

TrainConfig ExperimentSpec::train_config() const {
  TrainConfig cfg;
  cfg.lr_max = lr_max;
  cfg.lr_min = lr_min;
  cfg.beta1 = beta1;
  cfg.beta2 = beta2;
  cfg.eps = eps;
  cfg.weight_decay = weight_decay;
  cfg.batch_size = batch_size;
  cfg.epochs = epochs;
  cfg.seed = seed;
  cfg.grad_clip = grad_clip;
  return cfg;
}

std::vector<Variant> ExperimentSpec::variants() const {
  switch (variant) {
    case VariantChoice::baseline: return {Variant::baseline};
    case VariantChoice::glu: return {Variant::glu};
    case VariantChoice::both: break;
  }
  return {Variant::baseline, Variant::glu};
}

std::string history_csv(const History& history) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const HistoryRecord& r : history) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.step) + ',' + std::string(to_string(r.phase)) + ',' +
           format_double(r.loss) + ',' + format_double(r.accuracy) + ',' + format_double(r.lr) + '\n';
  }
  return out;
}

ExperimentData build_data(const ExperimentSpec& spec) {
  ExperimentData out;
  data::Dataset all;
  if (spec.task == Task::classify) {
    const auto images = spec.data_path.empty()
                            ? data::synth_images(spec.n_samples, spec.n_classes, spec.data_seed, spec.noise,
                                                 spec.image_size)
                            : data::read_cifar10_binary(spec.data_path);
    for (const auto& img : images) {
      if (img.label < 0 || static_cast<std::size_t>(img.label) >= spec.n_classes) {
        throw SpecError("image label " + std::to_string(img.label) + " exceeds n_classes", 0);
      }
    }
    all = data::classification_examples(images, spec.patch_size);
  } else {
    const data::TokenStream stream =
        spec.data_path.empty() ? data::synth_text(spec.text_chars, spec.data_seed) : data::read_text_file(spec.data_path);
    all = data::lm_windows(stream, spec.context);
    if (all.empty()) throw SpecError("text is shorter than one context window", 0);
  }
  const auto held_out = static_cast<std::size_t>(spec.val_fraction * static_cast<double>(all.size()));
  const std::size_t n_train = all.size() - held_out;
  if (n_train == 0) throw SpecError("val_fraction leaves no training examples", 0);
  out.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)));
  out.validation.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(n_train)), std::make_move_iterator(all.end()));
  if (spec.task == Task::lm) {
    data::TokenStream train_tokens;
    for (const auto& ex : out.train) {
      train_tokens.ids.insert(train_tokens.ids.end(), ex.tokens.begin(), ex.tokens.end());
    }
    out.unigram_entropy = data::unigram_entropy(train_tokens);
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  const ExperimentData data = build_data(spec);
  ExperimentResult result;
  result.unigram_entropy = data.unigram_entropy;
  const auto variants = spec.variants();
  std::filesystem::create_directories(out_dir);
  for (Variant v : variants) {
    const std::filesystem::path dir = variants.size() > 1 ? out_dir / std::string(to_string(v)) : out_dir;
    std::filesystem::create_directories(dir);
    Model<float> model(spec.model_config(v), spec.init_seed);
    VariantOutcome outcome;
    outcome.variant = v;
    outcome.parameter_count = model.parameter_count();
    outcome.history = fit(model, data.train, data.validation.empty() ? nullptr : &data.validation,
                          spec.train_config());
    if (!outcome.history.empty()) {
      const HistoryRecord& last = outcome.history.back();
      outcome.final_train = evaluate(model, data.train);
      outcome.history.push_back(
          {last.epoch, last.step, Phase::summary, outcome.final_train->loss, outcome.final_train->accuracy, last.lr});
    }
    write_file_atomic(dir / "metrics.csv", history_csv(outcome.history));
    checkpoint_save(model, dir / "model.ckpt");
    result.outcomes.push_back(std::move(outcome));
  }
  if (variants.size() > 1) write_file_atomic(out_dir / "comparison.csv", comparison_csv(result));
  return result;
}

std::string comparison_csv(const ExperimentResult& result) {
  const VariantOutcome* base = nullptr;
  const VariantOutcome* glu = nullptr;
  for (const auto& o : result.outcomes) (o.variant == Variant::glu ? glu : base) = &o;
  std::string out = "metric,baseline,glu,glu_minus_baseline\n";
  auto row = [&out](std::string_view name, double b, double g) {
    out += std::string(name) + ',' + format_double(b) + ',' + format_double(g) + ',' + format_double(g - b) + '\n';
  };
  if (!base || !glu) return out;
  row("parameters", static_cast<double>(base->parameter_count), static_cast<double>(glu->parameter_count));
  if (base->final_train && glu->final_train) {
    row("final_train_loss", base->final_train->loss, glu->final_train->loss);
    row("final_train_accuracy", base->final_train->accuracy, glu->final_train->accuracy);
  }
  auto last_val = [](const History& h) -> const HistoryRecord* {
    for (auto it = h.rbegin(); it != h.rend(); ++it)
      if (it->phase == Phase::val) return &*it;
    return nullptr;
  };
  if (const auto *bv = last_val(base->history), *gv = last_val(glu->history); bv && gv) {
    row("final_val_loss", bv->loss, gv->loss);
    row("final_val_accuracy", bv->accuracy, gv->accuracy);
  }
  if (result.unigram_entropy) row("unigram_entropy", *result.unigram_entropy, *result.unigram_entropy);
  return out;
}

}  // namespace glua::cli
