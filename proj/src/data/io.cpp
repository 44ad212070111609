#include <fstream>
#include <sstream>
#include <string>

#include "jft/data/dataset.hpp"
#include "json.hpp"

namespace jft::data {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

ordered_json image_json(const std::vector<double>& image) {
  ordered_json rows = ordered_json::array();
  for (std::size_t r = 0; r < kImageSize; ++r) {
    ordered_json row = ordered_json::array();
    for (std::size_t c = 0; c < kImageSize; ++c) row.push_back(image[r * kImageSize + c]);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Line-oriented reader that prefixes every error with file and line.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(open_in(path)) {}

  // Next non-blank line parsed as JSON; false at end of file.
  bool next(nlohmann::json& out) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        out = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        fail(std::string("malformed JSON: ") + e.what());
      }
      if (!out.is_object()) fail("expected a JSON object");
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path_.string() + ":" + std::to_string(line_no_) + ": " + what);
  }

  void check_header(const nlohmann::json& h, const std::string& format) const {
    if (!h.contains("format") || h["format"] != format) fail("expected header with format \"" + format + "\"");
    if (!h.contains("version") || !h["version"].is_number_integer()) fail("header lacks an integer version");
    if (h["version"].get<int>() != kFormatVersion) {
      fail("unsupported " + format + " version " + h["version"].dump() + " (expected " +
           std::to_string(kFormatVersion) + ")");
    }
  }

  std::uint64_t id(const nlohmann::json& rec) const {
    if (!rec.contains("id") || !rec["id"].is_number_unsigned()) fail("record lacks a non-negative integer id");
    return rec["id"].get<std::uint64_t>();
  }

  std::size_t bounded(const nlohmann::json& rec, const char* key, std::size_t limit, const char* what) const {
    if (!rec.contains(key) || !rec[key].is_number_integer()) fail(std::string("record lacks integer ") + key);
    auto v = rec[key].get<long long>();
    if (v < 0 || static_cast<std::size_t>(v) >= limit) {
      fail(std::string(key) + " " + std::to_string(v) + " out of range for " + std::to_string(limit) + " " + what);
    }
    return static_cast<std::size_t>(v);
  }

  std::vector<std::size_t> tokens(const nlohmann::json& rec, const char* key, std::size_t vocab) const {
    if (!rec.contains(key) || !rec[key].is_array()) fail(std::string("record lacks array ") + key);
    const auto& arr = rec[key];
    if (arr.empty() || arr.size() > kSequenceLength) {
      fail(std::string(key) + " must hold 1 to " + std::to_string(kSequenceLength) + " tokens");
    }
    std::vector<std::size_t> out;
    for (const auto& t : arr) {
      if (!t.is_number_integer() || t.get<long long>() < 0 || static_cast<std::size_t>(t.get<long long>()) >= vocab) {
        fail("token " + t.dump() + " outside vocabulary of " + std::to_string(vocab));
      }
      out.push_back(t.get<std::size_t>());
    }
    return out;
  }

  std::vector<double> image(const nlohmann::json& rec) const {
    if (!rec.contains("image") || !rec["image"].is_array() || rec["image"].size() != kImageSize) {
      fail("image must be a " + std::to_string(kImageSize) + "x" + std::to_string(kImageSize) + " array");
    }
    std::vector<double> out;
    out.reserve(kImageSize * kImageSize);
    for (const auto& row : rec["image"]) {
      if (!row.is_array() || row.size() != kImageSize) fail("image row must hold " + std::to_string(kImageSize) + " values");
      for (const auto& v : row) {
        if (!v.is_number()) fail("image values must be numbers");
        double x = v.get<double>();
        if (!(x >= 0.0 && x <= 1.0)) fail("image value " + v.dump() + " outside [0, 1]");
        out.push_back(x);
      }
    }
    return out;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

void write_line(std::ofstream& out, const ordered_json& j) { out << j.dump() << '\n'; }

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  auto out = open_out(path);
  write_line(out, ordered_json{{"format", "jft-dataset"},
                               {"version", kFormatVersion},
                               {"classes", dataset.classes},
                               {"vocab", dataset.vocab}});
  for (const auto& s : dataset.samples) {
    write_line(out, ordered_json{{"id", s.id}, {"label", s.label}, {"text", s.text}, {"image", image_json(s.image)}});
  }
  finish(out, path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  Reader reader(path);
  Dataset ds;
  nlohmann::json j;
  if (!reader.next(j)) return ds;
  reader.check_header(j, "jft-dataset");
  ds.classes = reader.bounded(j, "classes", kMaxClasses + 1, "max classes");
  if (ds.classes < 2) reader.fail("header classes must be at least 2");
  ds.vocab = reader.bounded(j, "vocab", kVocabSize + 1, "max vocab");
  while (reader.next(j)) {
    PairedSample s;
    s.id = reader.id(j);
    s.label = reader.bounded(j, "label", ds.classes, "classes");
    s.text = reader.tokens(j, "text", ds.vocab);
    s.image = reader.image(j);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_text_corpus(const std::filesystem::path& path, std::span<const TextCorpusSample> corpus) {
  auto out = open_out(path);
  write_line(out, ordered_json{{"format", "jft-text-corpus"}, {"version", kFormatVersion}, {"vocab", kVocabSize}});
  for (const auto& s : corpus) {
    write_line(out, ordered_json{{"id", s.id}, {"text", s.tokens}, {"masked", s.masked}, {"targets", s.targets}});
  }
  finish(out, path);
}

std::vector<TextCorpusSample> load_text_corpus(const std::filesystem::path& path) {
  Reader reader(path);
  std::vector<TextCorpusSample> out;
  nlohmann::json j;
  if (!reader.next(j)) return out;
  reader.check_header(j, "jft-text-corpus");
  std::size_t vocab = reader.bounded(j, "vocab", kVocabSize + 1, "max vocab");
  while (reader.next(j)) {
    TextCorpusSample s;
    s.id = reader.id(j);
    s.tokens = reader.tokens(j, "text", vocab);
    if (!j.contains("masked") || !j["masked"].is_array() || !j.contains("targets") || !j["targets"].is_array() ||
        j["masked"].size() != j["targets"].size() || j["masked"].empty()) {
      reader.fail("record needs equally long, non-empty masked and targets arrays");
    }
    for (const auto& m : j["masked"]) {
      if (!m.is_number_unsigned() || m.get<std::size_t>() >= s.tokens.size()) reader.fail("masked position out of range");
      s.masked.push_back(m.get<std::size_t>());
    }
    for (const auto& t : j["targets"]) {
      if (!t.is_number_unsigned() || t.get<std::size_t>() >= vocab) reader.fail("target token outside vocabulary");
      s.targets.push_back(t.get<std::size_t>());
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_image_corpus(const std::filesystem::path& path, std::span<const ImageCorpusSample> corpus) {
  auto out = open_out(path);
  write_line(out, ordered_json{{"format", "jft-image-corpus"}, {"version", kFormatVersion}, {"classes", kPatternClasses}});
  for (const auto& s : corpus) {
    write_line(out, ordered_json{{"id", s.id}, {"label", s.label}, {"image", image_json(s.image)}});
  }
  finish(out, path);
}

std::vector<ImageCorpusSample> load_image_corpus(const std::filesystem::path& path) {
  Reader reader(path);
  std::vector<ImageCorpusSample> out;
  nlohmann::json j;
  if (!reader.next(j)) return out;
  reader.check_header(j, "jft-image-corpus");
  std::size_t classes = reader.bounded(j, "classes", kMaxClasses + 1, "max classes");
  while (reader.next(j)) {
    ImageCorpusSample s;
    s.id = reader.id(j);
    s.label = reader.bounded(j, "label", classes, "classes");
    s.image = reader.image(j);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace jft::data
