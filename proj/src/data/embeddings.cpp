#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

#include "dcebad/data.hpp"
#include "dcebad/errors.hpp"

namespace dcebad::data {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

bool parse_size(std::string_view s, std::size_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_real(std::string_view s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

EmbeddingHeader parse_embedding_header(std::string_view line) {
  const auto fields = split_ws(line);
  EmbeddingHeader h;
  if (fields.size() != 2 || !parse_size(fields[0], h.count) || !parse_size(fields[1], h.dim) ||
      h.dim == 0) {
    throw IngestError("malformed embedding header '" + std::string(line) +
                      "': expected two positive integers 'count dim'");
  }
  return h;
}

PretrainedEmbeddings load_pretrained_embeddings(const std::filesystem::path& path,
                                                const Vocab& vocab, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open embeddings '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IngestError("embedding file '" + path.string() + "' is empty");

  PretrainedEmbeddings out;
  out.header = parse_embedding_header(line);
  const std::size_t dim = out.header.dim;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> init(0.0, 0.02);
  std::vector<double> matrix(vocab.size() * dim);
  for (double& v : matrix) v = init(rng);

  std::vector<bool> covered(vocab.size(), false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    ++out.rows_read;
    if (out.rows_read > out.header.count) {
      throw IngestError(path.string() + ":" + std::to_string(line_no) + ": more rows than the " +
                        std::to_string(out.header.count) + " declared in the header");
    }
    if (fields.size() != dim + 1) {
      throw IngestError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " values after the token, found " +
                        std::to_string(fields.size() - 1));
    }
    std::vector<double> row(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_real(fields[j + 1], row[j])) {
        throw IngestError(path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                          std::string(fields[j + 1]) + "'");
      }
    }
    if (!vocab.contains(fields[0])) continue;
    const std::size_t id = vocab.id(fields[0]);
    if (id < kNumReserved) continue;
    std::copy(row.begin(), row.end(), matrix.begin() + static_cast<std::ptrdiff_t>(id * dim));
    covered[id] = true;
  }
  if (out.rows_read < out.header.count) {
    out.warnings.push_back("embedding file declares " + std::to_string(out.header.count) +
                           " rows but contains " + std::to_string(out.rows_read));
  }
  const std::size_t candidates = vocab.size() - kNumReserved;
  const auto hits = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true));
  out.coverage = candidates == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(candidates);
  out.matrix = Tensor::from({vocab.size(), dim}, std::move(matrix), true);
  return out;
}

}  // namespace dcebad::data
