#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jft/autograd/tensor.hpp"

namespace jft::data {

inline constexpr std::size_t kImageSize = 16;
inline constexpr std::size_t kSequenceLength = 16;
inline constexpr std::size_t kVocabSize = 64;
inline constexpr std::size_t kSentimentSlots = 6;
inline constexpr std::size_t kTokensPerClass = 6;
inline constexpr std::size_t kMaxClasses = 10;
inline constexpr std::size_t kMaskedPerSequence = 2;
inline constexpr std::size_t kPatternClasses = 4;

// Sample id ranges keep corpora and paired datasets from ever sharing ids.
inline constexpr std::uint64_t kTextCorpusIdBase = 1'000'000'000;
inline constexpr std::uint64_t kImageCorpusIdBase = 2'000'000'000;

struct PairedSample {
  std::uint64_t id = 0;
  std::vector<std::size_t> text;
  std::vector<double> image;  // kImageSize x kImageSize, row-major, in [0, 1]
  std::size_t label = 0;

  friend bool operator==(const PairedSample&, const PairedSample&) = default;
};

struct Dataset {
  std::size_t classes = 0;
  std::size_t vocab = kVocabSize;
  std::vector<PairedSample> samples;
};

struct GeneratorSpec {
  std::size_t n = 3600;
  std::size_t classes = 3;
  double p_text = 0.9;
  double p_image = 0.6;
  std::uint64_t seed = 1;

  void validate() const;
};

// Class-balanced paired data with controllable per-modality informativeness.
// Text: of 16 tokens, 6 randomly placed sentiment slots draw from the label's
// token set with probability p_text, otherwise uniformly over word tokens;
// the remaining slots are uniform. Image: pixel = p_image * pattern(label) +
// (1 - p_image) * U[0,1), where pattern is a low-contrast linear ramp whose
// orientation is indexed by the label. Pixels are rounded to 6 decimals.
Dataset generate_paired_dataset(const GeneratorSpec& spec);

// Word tokens owned by a sentiment class.
std::vector<std::size_t> class_tokens(std::size_t label);
// Noise-free class ramp, kImageSize^2 values.
std::vector<double> class_pattern(std::size_t label, std::size_t classes);

struct TextCorpusSample {
  std::uint64_t id = 0;
  std::vector<std::size_t> tokens;  // masked positions hold the mask token
  std::vector<std::size_t> masked;  // positions, ascending
  std::vector<std::size_t> targets; // original tokens at the masked positions

  friend bool operator==(const TextCorpusSample&, const TextCorpusSample&) = default;
};

struct ImageCorpusSample {
  std::uint64_t id = 0;
  std::vector<double> image;
  std::size_t label = 0;  // one of kPatternClasses texture classes

  friend bool operator==(const ImageCorpusSample&, const ImageCorpusSample&) = default;
};

// Unpaired text for masked-token pretraining: each sequence follows one of 8
// topics (token groups); exactly 2 positions are masked.
std::vector<TextCorpusSample> generate_text_corpus(std::size_t n, std::uint64_t seed);
// Unpaired images for 4-way texture pretraining: horizontal stripes,
// vertical stripes, checkerboard, centered blob.
std::vector<ImageCorpusSample> generate_image_corpus(std::size_t n, std::uint64_t seed);

struct FoldAssignment {
  std::vector<std::vector<std::uint64_t>> folds;  // test ids per fold, ascending
};

struct LabeledId {
  std::uint64_t id;
  std::size_t label;
};

// Stratified, seeded k-fold partition. Folds differ in size by at most one and
// per-class counts per fold differ by at most one.
FoldAssignment kfold_split(std::span<const LabeledId> items, std::size_t k, std::uint64_t seed);
FoldAssignment kfold_split(const Dataset& dataset, std::size_t k, std::uint64_t seed);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One JSON object per line after a format header. Loading reports the line
// number of the first malformed record.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);
void save_text_corpus(const std::filesystem::path& path, std::span<const TextCorpusSample> corpus);
std::vector<TextCorpusSample> load_text_corpus(const std::filesystem::path& path);
void save_image_corpus(const std::filesystem::path& path, std::span<const ImageCorpusSample> corpus);
std::vector<ImageCorpusSample> load_image_corpus(const std::filesystem::path& path);

// Stacks images of the selected samples into [b, 1, 16, 16].
Tensor image_batch(std::span<const std::vector<double>* const> images);

}  // namespace jft::data
