#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "glua/tensor.hpp"

namespace glua::data {

/// H x W x 3 pixels in [0, 1], stored row-major with the channel fastest.
struct ImageSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  int label = 0;
};

/// One training example as consumed by the trainer. Classification examples
/// carry flattened patches in `features` and a single target; language-model
/// examples carry a token window and its next-token targets.
struct Example {
  std::vector<float> features;
  std::vector<int> tokens;
  std::vector<int> targets;
};

using Dataset = std::vector<Example>;

/// [(H/p)(W/p) x p*p*3]. Patches are ordered left-to-right, top-to-bottom;
/// inside a patch pixels are row-major with the channel fastest.
Tensor<float> patchify(const ImageSample& img, std::size_t patch);
/// Inverse of patchify.
std::vector<float> unpatchify(const Tensor<float>& patches, std::size_t height, std::size_t width,
                              std::size_t patch);

struct TokenStream {
  std::vector<int> ids;
};

inline constexpr std::size_t kByteVocab = 256;

TokenStream byte_tokenize(std::string_view text);
std::string detokenize(std::span<const int> ids);

/// Non-overlapping windows of `context` tokens; targets[t] = ids[t + 1].
Dataset lm_windows(const TokenStream& stream, std::size_t context);

/// Procedural 8x8x3 images; class k draws a stripe or checker motif keyed by
/// k plus seeded uniform noise in [-noise, noise], clamped to [0, 1].
std::vector<ImageSample> synth_images(std::size_t n, std::size_t classes, std::uint64_t seed, double noise = 0.1,
                                      std::size_t size = 8);

/// Key/value sentences from a small grammar with seeded variation.
TokenStream synth_text(std::size_t n_chars, std::uint64_t seed);

/// Byte-frequency entropy in nats: the loss of the best unigram predictor.
double unigram_entropy(const TokenStream& stream);

Dataset classification_examples(std::span<const ImageSample> images, std::size_t patch);

/// Per-epoch shuffled index batches; the order depends only on (seed, epoch).
/// The last batch may be partial.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

/// CIFAR-10 binary records: 1 label byte then 3072 bytes (1024 R, 1024 G,
/// 1024 B, each plane row-major) per 32x32 image.
std::vector<ImageSample> read_cifar10_binary(const std::filesystem::path& path);
TokenStream read_text_file(const std::filesystem::path& path);

}  // namespace glua::data
