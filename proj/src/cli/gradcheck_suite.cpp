#include "dcebad/cli/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "dcebad/errors.hpp"
#include "dcebad/gradcheck.hpp"
#include "dcebad/layers.hpp"

namespace dcebad::cli {

namespace {

constexpr std::size_t kBatch = 2;
/// Sample points closer than this to a relu or max-pool switch are redrawn.
constexpr double kKinkMargin = 1e-4;
constexpr int kMaxDraws = 100;

std::vector<double> uniform(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), uniform(n, -scale, scale, rng), true);
}

void rerandomize(const std::vector<NamedTensor>& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (const auto& p : params) {
    for (double& v : p.tensor.mutable_values()) v = dist(rng);
  }
}

/// Pad mask with the tail of the second sequence padded.
std::vector<std::uint8_t> ragged_mask(std::size_t batch, std::size_t seq_len) {
  std::vector<std::uint8_t> mask(batch * seq_len, 1);
  if (batch > 1 && seq_len > 2) {
    for (std::size_t t = seq_len - seq_len / 3; t < seq_len; ++t) mask[seq_len + t] = 0;
  }
  return mask;
}

/// Random projection of a layer output to a scalar, fixed for the whole check.
struct Probe {
  Tensor weights;
  Tensor operator()(Tape& tape, const Tensor& out) const { return tape.weighted_sum(out, weights); }
};

Probe make_probe(const Shape& shape, std::mt19937_64& rng) {
  return {Tensor::from(shape, uniform(shape_numel(shape), -1.0, 1.0, rng))};
}

struct Case {
  std::vector<NamedTensor> tensors;
  ScalarFn f;
};

using CaseBuilder = std::function<Case(std::mt19937_64&, const GradcheckOptions&)>;

Case lstm_step_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  const std::size_t hidden = std::max<std::size_t>(2, o.d_model / 2);
  auto p = nn::LstmParams::init(o.d_model, hidden, rng);
  Case c{p.named("lstm"), {}};
  rerandomize(c.tensors, rng);
  Tensor x = random_tensor({kBatch, o.d_model}, rng);
  Tensor h = random_tensor({kBatch, hidden}, rng);
  Tensor cell = random_tensor({kBatch, hidden}, rng);
  c.tensors.push_back({"x_t", x});
  c.tensors.push_back({"h_prev", h});
  c.tensors.push_back({"c_prev", cell});
  Probe ph = make_probe({kBatch, hidden}, rng), pc = make_probe({kBatch, hidden}, rng);
  c.f = [=](Tape& tape) {
    auto s = nn::lstm_step(tape, x, {h, cell}, p);
    return tape.add(ph(tape, s.h), pc(tape, s.c));
  };
  return c;
}

Case bilstm_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  const std::size_t hidden = std::max<std::size_t>(2, o.d_model / 2);
  auto fwd = nn::LstmParams::init(o.d_model, hidden, rng);
  auto bwd = nn::LstmParams::init(o.d_model, hidden, rng);
  Case c{fwd.named("fwd"), {}};
  for (auto& t : bwd.named("bwd")) c.tensors.push_back(t);
  rerandomize(c.tensors, rng);
  Tensor x = random_tensor({kBatch * o.seq_len, o.d_model}, rng);
  c.tensors.push_back({"x", x});
  Probe probe = make_probe({kBatch * o.seq_len, 2 * hidden}, rng);
  const std::size_t T = o.seq_len;
  c.f = [=](Tape& tape) { return probe(tape, nn::bilstm(tape, x, T, fwd, bwd)); };
  return c;
}

Case attention_pool_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  auto p = nn::AttnPoolParams::init(o.d_model, o.d_model, rng);
  Case c{p.named("attn_pool"), {}};
  rerandomize(c.tensors, rng);
  Tensor h = random_tensor({kBatch * o.seq_len, o.d_model}, rng);
  c.tensors.push_back({"h", h});
  Probe probe = make_probe({kBatch, o.d_model}, rng);
  const auto mask = ragged_mask(kBatch, o.seq_len);
  const std::size_t T = o.seq_len;
  c.f = [=](Tape& tape) { return probe(tape, nn::attention_pool(tape, h, T, p, mask).pooled); };
  return c;
}

std::size_t heads_for(std::size_t d_model) { return d_model % 2 == 0 ? 2 : 1; }

Case mhsa_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  auto p = nn::MultiHeadParams::init(o.d_model, heads_for(o.d_model), rng);
  Case c{p.named("mhsa"), {}};
  rerandomize(c.tensors, rng);
  Tensor x = random_tensor({kBatch * o.seq_len, o.d_model}, rng);
  c.tensors.push_back({"x", x});
  Probe probe = make_probe({kBatch * o.seq_len, o.d_model}, rng);
  const auto mask = ragged_mask(kBatch, o.seq_len);
  const std::size_t T = o.seq_len;
  c.f = [=](Tape& tape) { return probe(tape, nn::multi_head_self_attention(tape, x, T, p, mask)); };
  return c;
}

Case encoder_block_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  auto p = nn::EncoderBlockParams::init(o.d_model, heads_for(o.d_model), 4 * o.d_model, rng);
  Case c{p.named("block"), {}};
  rerandomize(c.tensors, rng);
  Tensor x = random_tensor({kBatch * o.seq_len, o.d_model}, rng);
  c.tensors.push_back({"x", x});
  Probe probe = make_probe({kBatch * o.seq_len, o.d_model}, rng);
  const auto mask = ragged_mask(kBatch, o.seq_len);
  const std::size_t T = o.seq_len;
  c.f = [=](Tape& tape) { return probe(tape, nn::encoder_block(tape, x, T, p, mask)); };
  return c;
}

Case conv_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  const std::size_t c_out = std::max<std::size_t>(2, o.d_model / 2);
  Tensor w = random_tensor({3 * o.d_model, c_out}, rng, 0.5);
  Tensor b = random_tensor({1, c_out}, rng, 0.5);
  Tensor x = random_tensor({kBatch * o.seq_len, o.d_model}, rng);
  Case c{{{"conv.w", w}, {"conv.b", b}, {"x", x}}, {}};
  Probe probe = make_probe({kBatch * o.seq_len, c_out}, rng);
  const std::size_t T = o.seq_len;
  c.f = [=](Tape& tape) { return probe(tape, nn::equal_width_conv(tape, x, T, w, b, 3)); };
  return c;
}

Case pool_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  Tensor x = random_tensor({kBatch * o.seq_len, o.d_model}, rng);
  Case c{{{"x", x}}, {}};
  const std::size_t out_len = (o.seq_len + 1) / 2;
  Probe probe = make_probe({kBatch * out_len, o.d_model}, rng);
  const std::size_t T = o.seq_len;
  c.f = [=](Tape& tape) { return probe(tape, nn::halving_pool(tape, x, T)); };
  return c;
}

Case dpcnn_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  const std::size_t filters = std::max<std::size_t>(2, o.d_model / 2);
  auto p = nn::ConvStackParams::init(o.d_model, filters, 3, o.seq_len, rng);
  Case c{p.named("dpcnn"), {}};
  rerandomize(c.tensors, rng);
  Tensor x = random_tensor({kBatch * o.seq_len, o.d_model}, rng);
  c.tensors.push_back({"x", x});
  Probe probe = make_probe({kBatch, filters}, rng);
  const std::size_t T = o.seq_len;
  c.f = [=](Tape& tape) { return probe(tape, nn::dpcnn_forward(tape, x, T, p)); };
  return c;
}

Case classifier_case(std::mt19937_64& rng, const GradcheckOptions& o) {
  const std::size_t k = 4;
  Tensor w = random_tensor({o.d_model, k}, rng, 0.5);
  Tensor b = random_tensor({1, k}, rng, 0.5);
  Tensor z = random_tensor({kBatch, o.d_model}, rng);
  Case c{{{"classifier.w", w}, {"classifier.b", b}, {"features", z}}, {}};
  std::vector<std::size_t> labels(kBatch);
  for (auto& l : labels) l = rng() % k;
  c.f = [=](Tape& tape) { return tape.cross_entropy(tape.add(tape.matmul(z, w), b), labels); };
  return c;
}

Case cross_entropy_case(std::mt19937_64& rng, const GradcheckOptions&) {
  const std::size_t k = 5, batch = 3;
  Tensor logits = random_tensor({batch, k}, rng, 2.0);
  Case c{{{"logits", logits}}, {}};
  std::vector<std::size_t> labels(batch);
  for (auto& l : labels) l = rng() % k;
  c.f = [=](Tape& tape) { return tape.cross_entropy(logits, labels); };
  return c;
}

const std::vector<std::pair<std::string, CaseBuilder>>& builders() {
  static const std::vector<std::pair<std::string, CaseBuilder>> table = {
      {"lstm_step", lstm_step_case},
      {"bilstm", bilstm_case},
      {"attention_pool", attention_pool_case},
      {"multi_head_self_attention", mhsa_case},
      {"encoder_block", encoder_block_case},
      {"equal_width_conv", conv_case},
      {"halving_pool", pool_case},
      {"dpcnn_forward", dpcnn_case},
      {"classifier", classifier_case},
      {"cross_entropy", cross_entropy_case},
  };
  return table;
}

ScalarFn with_fault(ScalarFn f, const std::optional<std::string>& op) {
  if (!op) return f;
  return [f = std::move(f), name = *op](Tape& tape) {
    tape.corrupt_backward(name, 1.5);
    return f(tape);
  };
}

double margin_of(const ScalarFn& f) {
  Tape tape;
  f(tape);
  return tape.kink_margin();
}

Case draw_case(const CaseBuilder& build, std::mt19937_64& rng, const GradcheckOptions& o) {
  Case c = build(rng, o);
  for (int attempt = 1; attempt < kMaxDraws && margin_of(c.f) < kKinkMargin; ++attempt) {
    c = build(rng, o);
  }
  return c;
}

void accumulate(LayerCheck& check, const std::vector<NamedTensor>& tensors,
                const GradCheckResult& r) {
  if (check.tensors.empty()) {
    for (const auto& t : tensors) check.tensors.push_back({t.name, 0.0});
  }
  for (std::size_t i = 0; i < r.per_param.size(); ++i) {
    check.tensors[i].max_rel_error = std::max(check.tensors[i].max_rel_error, r.per_param[i]);
  }
  check.max_rel_error = std::max(check.max_rel_error, r.max_rel_error);
}

data::Batch random_batch(const zoo::ModelConfig& config, std::mt19937_64& rng) {
  data::Batch batch;
  batch.size = kBatch;
  batch.text_size = config.text_size;
  batch.mask = ragged_mask(kBatch, config.text_size);
  batch.ids.resize(kBatch * config.text_size);
  for (std::size_t b = 0; b < kBatch; ++b) {
    const std::size_t base = b * config.text_size;
    std::size_t last_real = 0;
    for (std::size_t t = 0; t < config.text_size; ++t) {
      if (batch.mask[base + t]) last_real = t;
    }
    for (std::size_t t = 0; t < config.text_size; ++t) {
      std::size_t id = data::kPadId;
      if (t == 0) {
        id = data::kClsId;
      } else if (t == last_real) {
        id = data::kSepId;
      } else if (t < last_real) {
        id = data::kNumReserved + rng() % (config.vocab_size - data::kNumReserved);
      }
      batch.ids[base + t] = id;
    }
    batch.labels.push_back(rng() % config.num_classes);
  }
  return batch;
}

}  // namespace

const std::vector<std::string>& gradcheck_layers() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, builder] : builders()) n.push_back(name);
    return n;
  }();
  return names;
}

zoo::ModelConfig gradcheck_model_config(const GradcheckOptions& o) {
  zoo::ModelConfig c = zoo::ModelConfig{}.with_variant(o.variant, 1, heads_for(o.d_model));
  c.d_model = o.d_model;
  c.r_hidden = std::max<std::size_t>(2, o.d_model / 2);
  c.num_layers = 2;
  c.num_filters = std::max<std::size_t>(2, o.d_model / 2);
  c.cnn_filters = 2;
  c.vocab_size = data::kNumReserved + 8;
  c.num_classes = 3;
  c.text_size = std::max<std::size_t>(3, o.seq_len);
  c.dropout = 0.5;
  return c;
}

GradcheckReport run_gradcheck(const GradcheckOptions& o) {
  if (o.d_model == 0 || o.d_model > 16) throw ConfigError("gradcheck: d_model must lie in [1, 16]");
  if (o.seq_len == 0 || o.seq_len > 8) throw ConfigError("gradcheck: sequence length must lie in [1, 8]");
  if (o.seeds == 0) throw ConfigError("gradcheck: need at least one seed");

  GradcheckReport report;
  report.options = o;
  for (const auto& [name, build] : builders()) {
    LayerCheck check;
    check.layer = name;
    for (std::size_t seed = 0; seed < o.seeds; ++seed) {
      std::mt19937_64 rng(seed);
      Case c = draw_case(build, rng, o);
      accumulate(check, c.tensors, grad_check(with_fault(c.f, o.corrupt_op), c.tensors, o.eps));
    }
    check.passed = check.max_rel_error < o.threshold;
    report.layers.push_back(std::move(check));
  }

  // End to end: one 2-example batch through the whole model in eval mode.
  zoo::ModelConfig config = gradcheck_model_config(o);
  report.model.layer = "model." + std::string(zoo::variant_name(o.variant));
  std::mt19937_64 rng(config.seed);
  zoo::Model model = zoo::Model::build(config);
  data::Batch batch;
  ScalarFn f = [&model, &batch](Tape& tape) {
    return tape.cross_entropy(model.forward(tape, batch, zoo::Mode::eval), batch.labels);
  };
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    rerandomize(model.parameters(), rng);
    batch = random_batch(config, rng);
    if (margin_of(f) >= kKinkMargin) break;
  }
  accumulate(report.model, model.parameters(),
             grad_check(with_fault(f, o.corrupt_op), model.parameters(), o.eps));
  report.model.passed = report.model.max_rel_error < o.model_threshold;

  report.passed = report.model.passed &&
                  std::all_of(report.layers.begin(), report.layers.end(),
                              [](const LayerCheck& c) { return c.passed; });
  return report;
}

}  // namespace dcebad::cli
