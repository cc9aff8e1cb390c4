#include "glua/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include "glua/rng.hpp"

namespace glua::data {

Tensor<float> patchify(const ImageSample& img, std::size_t patch) {
  const std::size_t H = img.height, W = img.width;
  if (patch == 0 || H == 0 || W == 0 || H % patch != 0 || W % patch != 0) {
    throw std::invalid_argument("patchify: patch size " + std::to_string(patch) + " does not divide " +
                                std::to_string(H) + "x" + std::to_string(W));
  }
  if (img.pixels.size() != H * W * 3) throw std::invalid_argument("patchify: pixel buffer is not H*W*3");
  const std::size_t gh = H / patch, gw = W / patch, pdim = patch * patch * 3;
  Tensor<float> out({gh * gw, pdim});
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      float* dst = out.data().data() + (py * gw + px) * pdim;
      for (std::size_t y = 0; y < patch; ++y) {
        const float* src = img.pixels.data() + ((py * patch + y) * W + px * patch) * 3;
        std::copy(src, src + patch * 3, dst + y * patch * 3);
      }
    }
  }
  return out;
}

std::vector<float> unpatchify(const Tensor<float>& patches, std::size_t height, std::size_t width,
                              std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw std::invalid_argument("unpatchify: patch size does not divide the image");
  }
  const std::size_t gh = height / patch, gw = width / patch, pdim = patch * patch * 3;
  if (patches.shape() != Shape{gh * gw, pdim}) {
    throw ShapeError("unpatchify: expected " + shape_str({gh * gw, pdim}) + ", got " + shape_str(patches.shape()));
  }
  std::vector<float> pixels(height * width * 3);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      const float* src = patches.data().data() + (py * gw + px) * pdim;
      for (std::size_t y = 0; y < patch; ++y) {
        float* dst = pixels.data() + ((py * patch + y) * width + px * patch) * 3;
        std::copy(src + y * patch * 3, src + (y + 1) * patch * 3, dst);
      }
    }
  }
  return pixels;
}

TokenStream byte_tokenize(std::string_view text) {
  TokenStream s;
  s.ids.reserve(text.size());
  for (unsigned char c : text) s.ids.push_back(c);
  return s;
}

std::string detokenize(std::span<const int> ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id > 255) throw std::out_of_range("detokenize: id " + std::to_string(id) + " is not a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

Dataset lm_windows(const TokenStream& stream, std::size_t context) {
  if (context == 0) throw std::invalid_argument("lm_windows: context must be positive");
  Dataset out;
  const auto& ids = stream.ids;
  for (std::size_t start = 0; start + context < ids.size(); start += context) {
    Example ex;
    ex.tokens.assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                     ids.begin() + static_cast<std::ptrdiff_t>(start + context));
    ex.targets.assign(ids.begin() + static_cast<std::ptrdiff_t>(start + 1),
                      ids.begin() + static_cast<std::ptrdiff_t>(start + context + 1));
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

// Base intensity of class k at pixel (y, x) for channel c.
float motif(std::size_t k, std::size_t y, std::size_t x, std::size_t c) {
  const std::size_t orientation = k % 4;
  const std::size_t period = 2 + k / 4;
  std::size_t coord = 0;
  switch (orientation) {
    case 0: coord = y; break;
    case 1: coord = x; break;
    case 2: coord = x + y; break;
    default: coord = (x / (period - 1)) + (y / (period - 1)); break;
  }
  const bool on = orientation == 3 ? coord % 2 == 0 : coord % period < (period + 1) / 2;
  // Channel tint keyed by the class bits so colour also separates classes.
  const float tint = ((k >> c) & 1U) ? 1.0f : 0.6f;
  return (on ? 0.85f : 0.15f) * tint;
}

}  // namespace

std::vector<ImageSample> synth_images(std::size_t n, std::size_t classes, std::uint64_t seed, double noise,
                                      std::size_t size) {
  if (classes == 0 || classes > 16) throw std::invalid_argument("synth_images: classes must be in [1, 16]");
  Rng rng(derive_seed(seed, "synth_images"));
  std::vector<ImageSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ImageSample img;
    img.height = img.width = size;
    img.label = static_cast<int>(i % classes);
    img.pixels.resize(size * size * 3);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const double jitter = noise > 0.0 ? rng.uniform(-noise, noise) : 0.0;
          const double v = motif(static_cast<std::size_t>(img.label), y, x, c) + jitter;
          img.pixels[(y * size + x) * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

TokenStream synth_text(std::size_t n_chars, std::uint64_t seed) {
  static constexpr std::array<std::string_view, 8> kKeys = {"red", "blue", "green", "gold",
                                                            "gray", "pink", "teal", "navy"};
  static constexpr std::array<std::string_view, 6> kNouns = {"apple", "river", "stone", "cloud", "tiger", "lamp"};
  Rng rng(derive_seed(seed, "synth_text"));
  std::string text;
  text.reserve(n_chars + 32);
  while (text.size() < n_chars) {
    const std::size_t k = rng.below(kKeys.size());
    const std::size_t noun = rng.below(kNouns.size());
    // The value is a function of (key, noun) except for occasional noise.
    std::size_t value = (k * 7 + noun * 3) % 10;
    if (rng.uniform01() < 0.1) value = rng.below(10);
    if (rng.uniform01() < 0.3) text += "the ";
    text += kKeys[k];
    text += ' ';
    text += kNouns[noun];
    text += " is ";
    text += static_cast<char>('0' + value);
    text += ".\n";
  }
  text.resize(n_chars);
  return byte_tokenize(text);
}

double unigram_entropy(const TokenStream& stream) {
  if (stream.ids.empty()) return 0.0;
  std::array<std::size_t, kByteVocab> counts{};
  for (int id : stream.ids) ++counts.at(static_cast<std::size_t>(id));
  const double n = static_cast<double>(stream.ids.size());
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

Dataset classification_examples(std::span<const ImageSample> images, std::size_t patch) {
  Dataset out;
  out.reserve(images.size());
  for (const ImageSample& img : images) {
    Example ex;
    ex.features = patchify(img, patch).vec();
    ex.targets = {img.label};
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(derive_seed(seed, "batches"), epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<ImageSample> read_cifar10_binary(const std::filesystem::path& path) {
  constexpr std::size_t kSide = 32, kPlane = kSide * kSide, kRecord = 1 + 3 * kPlane;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CIFAR-10 file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw std::runtime_error("CIFAR-10 file " + path.string() + " has " + std::to_string(bytes.size()) +
                             " bytes, not a multiple of the 3073-byte record");
  }
  std::vector<ImageSample> out;
  out.reserve(bytes.size() / kRecord);
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
    ImageSample img;
    img.height = img.width = kSide;
    img.label = bytes[off];
    img.pixels.resize(kPlane * 3);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < kPlane; ++i)
        img.pixels[i * 3 + c] = static_cast<float>(bytes[off + 1 + c * kPlane + i]) / 255.0f;
    out.push_back(std::move(img));
  }
  return out;
}

TokenStream read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open text file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return byte_tokenize(text);
}

}  // namespace glua::data
