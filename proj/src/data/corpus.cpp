#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "dcebad/data.hpp"
#include "dcebad/errors.hpp"

namespace dcebad::data {

namespace {

Corpus parse_tsv(const std::filesystem::path& path, const std::vector<std::string>* fixed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open dataset '" + path.string() + "'");

  Corpus corpus;
  std::unordered_map<std::string, std::size_t> label_ids;
  if (fixed) {
    corpus.labels = *fixed;
    for (std::size_t i = 0; i < fixed->size(); ++i) label_ids.emplace((*fixed)[i], i);
  }

  std::vector<std::string> problems;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (!decode_utf8(line)) {
      problems.push_back(where + "invalid UTF-8");
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      problems.push_back(where + "missing tab between text and label");
      continue;
    }
    std::string text = line.substr(0, tab);
    std::string label = line.substr(tab + 1);
    if (text.empty()) {
      problems.push_back(where + "empty text field");
      continue;
    }
    if (label.empty() || label.find('\t') != std::string::npos) {
      problems.push_back(where + "label field must be a single non-empty name");
      continue;
    }
    auto it = label_ids.find(label);
    if (it == label_ids.end()) {
      if (fixed) {
        problems.push_back(where + "label '" + label + "' is not in the class inventory");
        continue;
      }
      it = label_ids.emplace(label, corpus.labels.size()).first;
      corpus.labels.push_back(label);
    }
    corpus.examples.push_back({std::move(text), it->second});
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "malformed dataset (" << problems.size() << " line(s)):";
    for (const auto& p : problems) os << "\n  " << p;
    throw IngestError(os.str());
  }
  return corpus;
}

}  // namespace

Corpus load_tsv(const std::filesystem::path& path) { return parse_tsv(path, nullptr); }

Corpus load_tsv(const std::filesystem::path& path, const std::vector<std::string>& labels) {
  return parse_tsv(path, &labels);
}

void write_tsv(const std::filesystem::path& path, const Corpus& corpus) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write dataset '" + path.string() + "'");
  for (const auto& ex : corpus.examples) out << ex.text << '\t' << corpus.labels.at(ex.label) << '\n';
}

Splits split(const std::vector<Example>& examples, std::size_t num_classes,
             std::array<unsigned, 3> ratios, std::uint64_t seed) {
  const unsigned total_ratio = ratios[0] + ratios[1] + ratios[2];
  if (total_ratio == 0) throw ContractError("split: ratios must not all be zero");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].label >= num_classes) {
      throw ContractError("split: label " + std::to_string(examples[i].label) +
                          " outside class count " + std::to_string(num_classes));
    }
    by_class[examples[i].label].push_back(i);
  }

  Splits out;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto& idx = by_class[k];
    if (idx.empty()) throw ContractError("split: class " + std::to_string(k) + " has no examples");
    if (idx.size() < total_ratio) {
      out.warnings.push_back("class " + std::to_string(k) + " has only " +
                             std::to_string(idx.size()) + " examples; using proportional rounding");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    const auto n_val = std::min<std::size_t>(
        idx.size(), static_cast<std::size_t>(std::llround(n * ratios[1] / total_ratio)));
    const auto n_test = std::min<std::size_t>(
        idx.size() - n_val, static_cast<std::size_t>(std::llround(n * ratios[2] / total_ratio)));
    const std::size_t n_train = idx.size() - n_val - n_test;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Example& ex = examples[idx[i]];
      if (i < n_train) {
        out.train.push_back(ex);
      } else if (i < n_train + n_val) {
        out.val.push_back(ex);
      } else {
        out.test.push_back(ex);
      }
    }
  }
  return out;
}

}  // namespace dcebad::data
