#include "spiro/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "spiro/adam.hpp"
#include "spiro/errors.hpp"
#include "spiro/eval.hpp"
#include "spiro/ops.hpp"
#include "spiro/rng.hpp"

namespace spiro::model {

using nlohmann::json;
using tc::Shape;
using tc::Tensor;
using tc::Var;

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;
constexpr std::uint64_t kInitStream = 0x494e4954;     // "INIT"
constexpr std::uint64_t kShuffleStream = 0x53485546;  // "SHUF"
constexpr std::uint64_t kDropoutStream = 0x44524f50;  // "DROP"

Tensor xavier(std::size_t out, std::size_t in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(Shape{out, in});
  for (double& v : t.storage()) v = u(rng);
  return t;
}

Tensor gaussian(Shape shape, Rng& rng) {
  std::normal_distribution<double> n(0.0, kInitStd);
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = n(rng);
  return t;
}

Var param(Tensor t) { return Var::parameter(std::move(t)); }

void check_finite(const Var& v, const std::string& where) {
  const Tensor& t = v.value();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      fail(ErrorKind::numeric, "non-finite activation in " + where + " at element " +
                                   std::to_string(i));
    }
  }
}

struct Graph {
  Var hidden;  // [L, d]
  Var logit;   // [1]
  std::vector<Tensor> attention;  // per layer [heads, L, L]
};

// Runs the encoder and head on the rows of `x` (already embedded).
Graph run_encoder(Var x, const std::vector<bool>& mask, const ModelParams& p,
                  const ModelConfig& c, Rng* rng) {
  const double drop = rng ? c.dropout : 0.0;
  Graph g;
  if (rng) x = tc::dropout(x, drop, *rng);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const EncoderLayer& e = p.encoder[l];
    const Var q = tc::linear(x, e.wq, e.bq);
    const Var k = tc::linear(x, e.wk, e.bk);
    const Var v = tc::linear(x, e.wv, e.bv);
    tc::AttentionResult a = tc::masked_multi_head_attention(q, k, v, mask, c.heads);
    g.attention.push_back(std::move(a.attention));
    Var o = tc::linear(a.output, e.wo, e.bo);
    if (rng) o = tc::dropout(o, drop, *rng);
    x = tc::layer_norm(tc::add(x, o), e.ln1_g, e.ln1_b, kLnEps);
    Var f = tc::linear(tc::gelu(tc::linear(x, e.w1, e.b1)), e.w2, e.b2);
    if (rng) f = tc::dropout(f, drop, *rng);
    x = tc::layer_norm(tc::add(x, f), e.ln2_g, e.ln2_b, kLnEps);
    check_finite(x, "encoder layer " + std::to_string(l));
  }
  g.hidden = x;
  const Var h0 = tc::row(x, 0);
  g.logit = tc::linear(tc::gelu(tc::linear(h0, p.head_w1, p.head_b1)), p.head_w2, p.head_b2);
  check_finite(g.logit, "output head");
  return g;
}

void check_sequence(const preproc::PatchSequence& seq, const ModelParams& p) {
  const std::size_t pos_rows = p.pos.value().dim(0);
  require(seq.patch_len == p.w_proj.value().dim(1), ErrorKind::shape,
          "patch length " + std::to_string(seq.patch_len) + " does not match W_proj " +
              p.w_proj.value().shape_string());
  require(seq.n_patches + 1 <= pos_rows, ErrorKind::shape,
          "sequence has " + std::to_string(seq.n_patches) + " patches but the model holds " +
              std::to_string(pos_rows - 1) + " positions");
  require(seq.mask.size() == seq.n_patches + 1 && seq.values.size() == seq.n_patches * seq.patch_len,
          ErrorKind::shape, "malformed patch sequence");
}

// Embeds the chosen tokens (0 = CLS, i = patch i-1).
Var embed_tokens(const preproc::PatchSequence& seq, const ModelParams& p,
                 const std::vector<std::size_t>& tokens) {
  check_sequence(seq, p);
  std::vector<double> rows;
  for (std::size_t t : tokens) {
    if (t == 0) continue;
    const auto patch = seq.patch(t - 1);
    rows.insert(rows.end(), patch.begin(), patch.end());
  }
  std::vector<Var> parts{p.cls};
  const std::size_t n = tokens.size() - 1;
  if (n > 0) {
    const Var patches = Var::constant(Tensor(Shape{n, seq.patch_len}, std::move(rows)));
    parts.push_back(tc::linear(patches, p.w_proj, p.b_proj));
  }
  return tc::add(tc::concat_rows(parts), tc::gather_rows(p.pos, tokens));
}

std::vector<std::size_t> all_tokens(const preproc::PatchSequence& seq) {
  std::vector<std::size_t> t(seq.n_patches + 1);
  std::iota(t.begin(), t.end(), 0);
  return t;
}

std::vector<std::size_t> valid_tokens(const preproc::PatchSequence& seq) {
  std::vector<std::size_t> t{0};
  for (std::size_t i = 1; i <= seq.n_patches; ++i) {
    if (!seq.mask[i]) t.push_back(i);
  }
  return t;
}

Graph compact_graph(const ModelParams& p, const ModelConfig& c,
                    const preproc::PatchSequence& seq, Rng* rng) {
  const std::vector<std::size_t> tokens = valid_tokens(seq);
  const Var x = embed_tokens(seq, p, tokens);
  return run_encoder(x, std::vector<bool>(tokens.size(), false), p, c, rng);
}

}  // namespace

void validate(const ModelConfig& c) {
  require(c.patch_len > 0, ErrorKind::config, "patch length must be positive");
  require(c.d_embed > 0 && c.heads > 0 && c.d_embed % c.heads == 0, ErrorKind::config,
          "d_embed " + std::to_string(c.d_embed) + " must be divisible by heads " +
              std::to_string(c.heads));
  require(c.length > 0 && c.length % c.patch_len == 0, ErrorKind::config,
          "T " + std::to_string(c.length) + " must be divisible by P " +
              std::to_string(c.patch_len));
  require(c.layers >= 1 && c.ffn_mult >= 1 && c.head_hidden >= 1, ErrorKind::config,
          "layers, ffn_mult and head_hidden must be positive");
  require(c.dropout >= 0.0 && c.dropout < 1.0, ErrorKind::config, "dropout must lie in [0,1)");
  require(c.lr >= 0.0 && std::isfinite(c.lr), ErrorKind::config, "lr must be non-negative");
  require(c.epochs >= 1 && c.batch_size >= 1, ErrorKind::config,
          "epochs and batch_size must be positive");
  double total = 0.0;
  for (double f : c.split) {
    require(f >= 0.0, ErrorKind::config, "split fractions must be non-negative");
    total += f;
  }
  require(std::abs(total - 1.0) < 1e-9, ErrorKind::config, "split fractions must sum to 1");
}

json to_json(const ModelConfig& c) {
  return {{"patch_len", c.patch_len}, {"d_embed", c.d_embed},     {"layers", c.layers},
          {"heads", c.heads},         {"ffn_mult", c.ffn_mult},   {"dropout", c.dropout},
          {"lr", c.lr},               {"epochs", c.epochs},       {"batch_size", c.batch_size},
          {"split", c.split},         {"seed", c.seed},           {"length", c.length},
          {"head_hidden", c.head_hidden}};
}

ModelConfig config_from_json(const json& j, ModelConfig c) {
  require(j.is_object(), ErrorKind::config, "model config must be a JSON object");
  static const std::set<std::string> known{"patch_len", "d_embed", "layers",   "heads",
                                           "ffn_mult",  "dropout", "lr",       "epochs",
                                           "batch_size", "split",  "seed",     "length",
                                           "head_hidden"};
  for (const auto& [key, _] : j.items()) {
    require(known.count(key) == 1, ErrorKind::config, "unknown model config key '" + key + "'");
  }
  try {
    c.patch_len = j.value("patch_len", c.patch_len);
    c.d_embed = j.value("d_embed", c.d_embed);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.dropout = j.value("dropout", c.dropout);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.split = j.value("split", c.split);
    c.seed = j.value("seed", c.seed);
    c.length = j.value("length", c.length);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad model config value: ") + e.what());
  }
  return c;
}

std::vector<std::pair<std::string, Var>> ModelParams::named() const {
  std::vector<std::pair<std::string, Var>> out{
      {"W_proj", w_proj}, {"b_proj", b_proj}, {"cls", cls}, {"pos", pos}};
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const EncoderLayer& e = encoder[l];
    const std::string p = "encoder." + std::to_string(l) + ".";
    for (const auto& [n, v] : std::vector<std::pair<const char*, const Var*>>{
             {"wq", &e.wq},       {"bq", &e.bq},       {"wk", &e.wk}, {"bk", &e.bk},
             {"wv", &e.wv},       {"bv", &e.bv},       {"wo", &e.wo}, {"bo", &e.bo},
             {"ln1_g", &e.ln1_g}, {"ln1_b", &e.ln1_b}, {"w1", &e.w1}, {"b1", &e.b1},
             {"w2", &e.w2},       {"b2", &e.b2},       {"ln2_g", &e.ln2_g}, {"ln2_b", &e.ln2_b}}) {
      out.emplace_back(p + n, *v);
    }
  }
  out.emplace_back("head.w1", head_w1);
  out.emplace_back("head.b1", head_b1);
  out.emplace_back("head.w2", head_w2);
  out.emplace_back("head.b2", head_b2);
  return out;
}

std::vector<Var> ModelParams::list() const {
  std::vector<Var> out;
  for (auto& [_, v] : named()) out.push_back(v);
  return out;
}

std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_embed;
  const std::size_t ff = c.ffn_mult * d;
  std::vector<std::pair<std::string, Shape>> out{{"W_proj", {d, c.patch_len}},
                                                 {"b_proj", {d}},
                                                 {"cls", {1, d}},
                                                 {"pos", {c.n_patches() + 1, d}}};
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    for (const char* n : {"wq", "wk", "wv", "wo"}) {
      out.emplace_back(p + n, Shape{d, d});
      out.emplace_back(p + "b" + std::string(n + 1), Shape{d});
    }
    out.emplace_back(p + "ln1_g", Shape{d});
    out.emplace_back(p + "ln1_b", Shape{d});
    out.emplace_back(p + "w1", Shape{ff, d});
    out.emplace_back(p + "b1", Shape{ff});
    out.emplace_back(p + "w2", Shape{d, ff});
    out.emplace_back(p + "b2", Shape{d});
    out.emplace_back(p + "ln2_g", Shape{d});
    out.emplace_back(p + "ln2_b", Shape{d});
  }
  out.emplace_back("head.w1", Shape{c.head_hidden, d});
  out.emplace_back("head.b1", Shape{c.head_hidden});
  out.emplace_back("head.w2", Shape{1, c.head_hidden});
  out.emplace_back("head.b2", Shape{1});
  return out;
}

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  validate(c);
  Rng rng(derive_seed(seed, kInitStream));
  const std::size_t d = c.d_embed;
  const std::size_t ff = c.ffn_mult * d;
  ModelParams p;
  p.w_proj = param(xavier(d, c.patch_len, rng));
  p.b_proj = param(Tensor(Shape{d}, 0.0));
  p.cls = param(gaussian(Shape{1, d}, rng));
  p.pos = param(gaussian(Shape{c.n_patches() + 1, d}, rng));
  for (std::size_t l = 0; l < c.layers; ++l) {
    EncoderLayer e;
    e.wq = param(xavier(d, d, rng));
    e.bq = param(Tensor(Shape{d}, 0.0));
    e.wk = param(xavier(d, d, rng));
    e.bk = param(Tensor(Shape{d}, 0.0));
    e.wv = param(xavier(d, d, rng));
    e.bv = param(Tensor(Shape{d}, 0.0));
    e.wo = param(xavier(d, d, rng));
    e.bo = param(Tensor(Shape{d}, 0.0));
    e.ln1_g = param(Tensor(Shape{d}, 1.0));
    e.ln1_b = param(Tensor(Shape{d}, 0.0));
    e.w1 = param(xavier(ff, d, rng));
    e.b1 = param(Tensor(Shape{ff}, 0.0));
    e.w2 = param(xavier(d, ff, rng));
    e.b2 = param(Tensor(Shape{d}, 0.0));
    e.ln2_g = param(Tensor(Shape{d}, 1.0));
    e.ln2_b = param(Tensor(Shape{d}, 0.0));
    p.encoder.push_back(std::move(e));
  }
  p.head_w1 = param(xavier(c.head_hidden, d, rng));
  p.head_b1 = param(Tensor(Shape{c.head_hidden}, 0.0));
  p.head_w2 = param(gaussian(Shape{1, c.head_hidden}, rng));
  p.head_b2 = param(Tensor(Shape{1}, 0.0));
  return p;
}

ModelParams params_from_named(const ModelConfig& c,
                              const std::vector<std::pair<std::string, Tensor>>& tensors) {
  validate(c);
  ModelParams p = init_params(c, 0);
  auto slots = p.named();
  require(tensors.size() == slots.size(), ErrorKind::shape,
          "expected " + std::to_string(slots.size()) + " model tensors, found " +
              std::to_string(tensors.size()));
  for (auto& [name, var] : slots) {
    const auto it = std::find_if(tensors.begin(), tensors.end(),
                                 [&](const auto& t) { return t.first == name; });
    require(it != tensors.end(), ErrorKind::shape, "missing model tensor '" + name + "'");
    require(it->second.shape() == var.shape(), ErrorKind::shape,
            "tensor '" + name + "' has shape " + it->second.shape_string() +
                " but the config implies " + var.value().shape_string());
    require(it->second.all_finite(), ErrorKind::numeric,
            "tensor '" + name + "' holds non-finite values");
    var.mutable_value() = it->second;
  }
  return p;
}

ModelParams ModelParams::clone() const {
  ModelParams out = *this;
  auto copy = [](Var& v) { v = Var::parameter(v.value()); };
  copy(out.w_proj);
  copy(out.b_proj);
  copy(out.cls);
  copy(out.pos);
  for (EncoderLayer& e : out.encoder) {
    for (Var* v : {&e.wq, &e.bq, &e.wk, &e.bk, &e.wv, &e.bv, &e.wo, &e.bo, &e.ln1_g, &e.ln1_b,
                   &e.w1, &e.b1, &e.w2, &e.b2, &e.ln2_g, &e.ln2_b}) {
      copy(*v);
    }
  }
  copy(out.head_w1);
  copy(out.head_b1);
  copy(out.head_w2);
  copy(out.head_b2);
  return out;
}

Var embed_patches(const preproc::PatchSequence& seq, const ModelParams& p) {
  return embed_tokens(seq, p, all_tokens(seq));
}

ForwardTrace forward(const preproc::PatchSequence& seq, const ModelParams& p,
                     const ModelConfig& c) {
  require(seq.mask.at(0) == false, ErrorKind::shape, "the CLS slot must not be masked");
  const Graph g = run_encoder(embed_patches(seq, p), seq.mask, p, c, nullptr);
  ForwardTrace t;
  t.hidden = g.hidden.value();
  const std::size_t d = t.hidden.dim(1);
  t.cls_embedding.assign(t.hidden.data(), t.hidden.data() + d);
  t.logit = g.logit.value()[0];
  t.probability = tc::sigmoid(t.logit);
  const std::size_t len = seq.n_patches + 1;
  t.attention = Tensor(Shape{g.attention.size(), c.heads, len, len});
  for (std::size_t l = 0; l < g.attention.size(); ++l) {
    std::copy(g.attention[l].storage().begin(), g.attention[l].storage().end(),
              t.attention.data() + l * c.heads * len * len);
  }
  return t;
}

Prediction predict(const ModelParams& p, const ModelConfig& c, const preproc::PatchSequence& seq) {
  const Graph g = compact_graph(p, c, seq, nullptr);
  Prediction out;
  out.logit = g.logit.value()[0];
  out.probability = tc::sigmoid(out.logit);
  const Tensor& h = g.hidden.value();
  out.cls_embedding.assign(h.data(), h.data() + h.dim(1));
  return out;
}

std::vector<Prediction> predict_batch(const ModelParams& p, const ModelConfig& c,
                                      const std::vector<preproc::PatchSequence>& seqs) {
  std::vector<Prediction> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(predict(p, c, s));
  return out;
}

Var example_loss(const ModelParams& p, const ModelConfig& c, const preproc::PatchSequence& seq,
                 int label, Rng* dropout_rng) {
  return tc::sigmoid_cross_entropy(compact_graph(p, c, seq, dropout_rng).logit, label);
}

TrainResult train(const LabeledSet& train_set, const LabeledSet& val_set, const ModelConfig& c,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  validate(c);
  require(!train_set.x.empty(), ErrorKind::config, "training split is empty");
  require(!val_set.x.empty(), ErrorKind::config, "validation split is empty");
  require(train_set.x.size() == train_set.y.size() && val_set.x.size() == val_set.y.size(),
          ErrorKind::shape, "inputs and labels differ in length");

  ModelParams params = init_params(c, c.seed);
  std::vector<Var> plist = params.list();
  std::vector<std::string> names;
  for (const auto& [n, _] : params.named()) names.push_back(n);
  tc::AdamState adam = tc::make_adam_state(plist);

  const bool val_has_both =
      std::find(val_set.y.begin(), val_set.y.end(), 0) != val_set.y.end() &&
      std::find(val_set.y.begin(), val_set.y.end(), 1) != val_set.y.end();

  TrainResult result;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.x.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    // The permutation depends only on (seed, epoch), never on prior state.
    Rng shuffle(derive_seed(c.seed, kShuffleStream, epoch));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle() % i)]);
    }
    Rng drop(derive_seed(c.seed, kDropoutStream, epoch));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      const std::size_t end = std::min(order.size(), start + c.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      tc::zero_grads(plist);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const Var loss = example_loss(params, c, train_set.x[i], train_set.y[i], &drop);
        loss_sum += loss.value()[0];
        tc::backward(tc::scale(loss, inv_b));
      }
      tc::adam_step(plist, adam, c.lr, names);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    std::vector<double> probs;
    double vloss = 0.0;
    for (std::size_t i = 0; i < val_set.x.size(); ++i) {
      const Prediction pr = predict(params, c, val_set.x[i]);
      const double z = pr.logit;
      const double y = val_set.y[i];
      vloss += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
      probs.push_back(pr.probability);
    }
    rec.val_loss = vloss / static_cast<double>(val_set.x.size());
    rec.val_auc = val_has_both ? eval::roc_auc(probs, val_set.y)
                               : std::numeric_limits<double>::quiet_NaN();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const double score = val_has_both ? rec.val_auc : -rec.val_loss;
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.params = params.clone();
    }
  }
  return result;
}

}  // namespace spiro::model
