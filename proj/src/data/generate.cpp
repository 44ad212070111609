#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "jft/data/dataset.hpp"
#include "jft/encoders/encoders.hpp"
#include "jft/util/rng.hpp"

namespace jft::data {
namespace {

// Half-range of the class ramp before blending with noise.
constexpr double kPatternContrast = 0.06;
constexpr std::size_t kTopics = 8;
constexpr double kTopicAdherence = 0.8;

double round6(double v) { return std::round(v * 1e6) / 1e6; }

std::size_t uniform_word(Rng& rng) {
  return encoders::kFirstWordToken + rng.index(kVocabSize - encoders::kFirstWordToken);
}

std::vector<std::size_t> pick_positions(Rng& rng, std::size_t count) {
  std::vector<std::size_t> all(kSequenceLength);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  rng.shuffle(all);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

double texture(std::size_t label, std::size_t r, std::size_t c, const double* shape) {
  const double two_pi = 2.0 * std::numbers::pi;
  switch (label) {
    case 0: return 0.5 + 0.5 * std::sin(two_pi * static_cast<double>(r) / shape[0] + shape[1]);
    case 1: return 0.5 + 0.5 * std::sin(two_pi * static_cast<double>(c) / shape[0] + shape[1]);
    case 2: {
      auto cell = static_cast<std::size_t>(shape[0]);
      auto off = static_cast<std::size_t>(shape[1]);
      return ((r + off) / cell + (c + off) / cell) % 2 == 0 ? 1.0 : 0.0;
    }
    default: {
      double dr = static_cast<double>(r) - shape[1], dc = static_cast<double>(c) - shape[2];
      return std::exp(-(dr * dr + dc * dc) / (2.0 * shape[0] * shape[0]));
    }
  }
}

}  // namespace

void GeneratorSpec::validate() const {
  if (classes < 2 || classes > kMaxClasses) {
    throw std::invalid_argument("classes must be between 2 and " + std::to_string(kMaxClasses));
  }
  if (n == 0 || n % classes != 0) throw std::invalid_argument("n must be divisible by classes");
  if (!(p_text >= 0.0 && p_text <= 1.0)) throw std::invalid_argument("p_text must be in [0, 1]");
  if (!(p_image >= 0.0 && p_image <= 1.0)) throw std::invalid_argument("p_image must be in [0, 1]");
}

std::vector<std::size_t> class_tokens(std::size_t label) {
  std::vector<std::size_t> out(kTokensPerClass);
  for (std::size_t i = 0; i < kTokensPerClass; ++i) out[i] = encoders::kFirstWordToken + label * kTokensPerClass + i;
  return out;
}

std::vector<double> class_pattern(std::size_t label, std::size_t classes) {
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(classes);
  const double scale = 1.0 / static_cast<double>(kImageSize - 1);
  std::vector<double> out(kImageSize * kImageSize);
  for (std::size_t r = 0; r < kImageSize; ++r)
    for (std::size_t c = 0; c < kImageSize; ++c) {
      double u = 2.0 * static_cast<double>(c) * scale - 1.0;
      double v = 2.0 * static_cast<double>(r) * scale - 1.0;
      double ramp = (u * std::cos(theta) + v * std::sin(theta)) / std::numbers::sqrt2;
      out[r * kImageSize + c] = 0.5 + kPatternContrast * ramp;
    }
  return out;
}

Dataset generate_paired_dataset(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<std::size_t> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = i % spec.classes;
  rng.shuffle(labels);

  std::vector<std::vector<double>> patterns;
  for (std::size_t y = 0; y < spec.classes; ++y) patterns.push_back(class_pattern(y, spec.classes));

  Dataset ds;
  ds.classes = spec.classes;
  ds.vocab = kVocabSize;
  ds.samples.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    PairedSample s;
    s.id = i;
    s.label = labels[i];
    auto own = class_tokens(s.label);
    s.text.resize(kSequenceLength);
    for (auto& t : s.text) t = uniform_word(rng);
    for (std::size_t pos : pick_positions(rng, kSentimentSlots)) {
      if (rng.bernoulli(spec.p_text)) s.text[pos] = own[rng.index(own.size())];
    }
    s.image.resize(kImageSize * kImageSize);
    for (std::size_t p = 0; p < s.image.size(); ++p) {
      double noise = rng.uniform();
      s.image[p] = round6(spec.p_image * patterns[s.label][p] + (1.0 - spec.p_image) * noise);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<TextCorpusSample> generate_text_corpus(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("text corpus size must be positive");
  Rng rng(seed);
  std::vector<TextCorpusSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TextCorpusSample s;
    s.id = kTextCorpusIdBase + i;
    const std::size_t topic = rng.index(kTopics);
    s.tokens.resize(kSequenceLength);
    for (auto& t : s.tokens) {
      if (rng.bernoulli(kTopicAdherence)) {
        // Word w belongs to topic (w - first) % kTopics.
        std::size_t members = (kVocabSize - encoders::kFirstWordToken - topic + kTopics - 1) / kTopics;
        t = encoders::kFirstWordToken + topic + kTopics * rng.index(members);
      } else {
        t = uniform_word(rng);
      }
    }
    s.masked = pick_positions(rng, kMaskedPerSequence);
    for (std::size_t pos : s.masked) {
      s.targets.push_back(s.tokens[pos]);
      s.tokens[pos] = encoders::kMaskToken;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ImageCorpusSample> generate_image_corpus(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("image corpus size must be positive");
  Rng rng(seed);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % kPatternClasses;
  rng.shuffle(labels);
  std::vector<ImageCorpusSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ImageCorpusSample s;
    s.id = kImageCorpusIdBase + i;
    s.label = labels[i];
    double shape[3] = {0.0, 0.0, 0.0};
    switch (s.label) {
      case 0:
      case 1:
        shape[0] = rng.uniform(3.0, 6.0);
        shape[1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        break;
      case 2:
        shape[0] = static_cast<double>(2 + rng.index(3));
        shape[1] = static_cast<double>(rng.index(4));
        break;
      default:
        shape[0] = rng.uniform(2.0, 4.0);
        shape[1] = rng.uniform(5.0, 10.0);
        shape[2] = rng.uniform(5.0, 10.0);
        break;
    }
    s.image.resize(kImageSize * kImageSize);
    for (std::size_t r = 0; r < kImageSize; ++r)
      for (std::size_t c = 0; c < kImageSize; ++c) {
        double v = 0.6 * texture(s.label, r, c, shape) + 0.4 * rng.uniform();
        s.image[r * kImageSize + c] = round6(v);
      }
    out.push_back(std::move(s));
  }
  return out;
}

FoldAssignment kfold_split(std::span<const LabeledId> items, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("kfold_split: k must be positive");
  if (k > items.size()) {
    throw std::invalid_argument("kfold_split: k = " + std::to_string(k) + " exceeds " + std::to_string(items.size()) +
                                " samples");
  }
  std::size_t max_label = 0;
  for (const auto& it : items) max_label = std::max(max_label, it.label);
  std::vector<std::vector<std::uint64_t>> by_label(max_label + 1);
  for (const auto& it : items) by_label[it.label].push_back(it.id);

  Rng rng(seed);
  FoldAssignment out;
  out.folds.resize(k);
  // Dealing continues across classes so that total fold sizes stay balanced.
  std::size_t next = 0;
  for (auto& ids : by_label) {
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);
    for (auto id : ids) out.folds[next++ % k].push_back(id);
  }
  for (auto& f : out.folds) std::sort(f.begin(), f.end());
  return out;
}

FoldAssignment kfold_split(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  std::vector<LabeledId> items;
  items.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) items.push_back({s.id, s.label});
  return kfold_split(items, k, seed);
}

Tensor image_batch(std::span<const std::vector<double>* const> images) {
  const std::size_t area = kImageSize * kImageSize;
  std::vector<double> v;
  v.reserve(images.size() * area);
  for (const auto* img : images) {
    if (img->size() != area) throw ShapeError("image_batch: image has " + std::to_string(img->size()) + " pixels");
    v.insert(v.end(), img->begin(), img->end());
  }
  return Tensor({images.size(), 1, kImageSize, kImageSize}, std::move(v));
}

}  // namespace jft::data
