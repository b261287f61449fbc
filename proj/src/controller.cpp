#include "seminas/controller.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <numbers>
#include <ostream>
#include <sstream>

#include "seminas/errors.hpp"

namespace seminas {

using grad::Matrix;
using grad::Tape;
using grad::Tensor2;
using grad::Var;

namespace {

// Per-row decoding state for the dynamic masks: edge budget and which slots
// already have an edge (those may not be PAD; edgeless slots must be PAD).
struct MaskState {
  std::size_t edges = 0;
  std::vector<char> slot_has_edge;
};

void fill_legal(const TokenLayout& layout, std::size_t max_edges, std::size_t pos, const MaskState& st, char* out) {
  std::fill(out, out + layout.vocab_size(), 0);
  switch (layout.kind(pos)) {
    case PositionKind::kStart:
      out[kSos] = 1;
      break;
    case PositionKind::kEdge:
      out[kEdgeOff] = 1;
      out[kEdgeOn] = st.edges < max_edges ? 1 : 0;
      break;
    case PositionKind::kOp:
      if (st.slot_has_edge[layout.op_slot(pos)]) {
        for (std::size_t k = 0; k < layout.num_ops(); ++k) out[kFirstOpToken + k] = 1;
      } else {
        out[kPad] = 1;
      }
      break;
    case PositionKind::kEnd:
      out[kEos] = 1;
      break;
  }
}

void advance(const TokenLayout& layout, std::size_t pos, int token, MaskState& st) {
  if (layout.kind(pos) == PositionKind::kEdge && token == kEdgeOn) {
    ++st.edges;
    const auto [i, j] = layout.edge_slots(pos);
    st.slot_has_edge[i] = st.slot_has_edge[j] = 1;
  }
}

void init_uniform(Tensor2& t, double scale, Rng& rng) {
  for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = rng.uniform(-scale, scale);
  t.zero_grad();
}

void write_matrix(std::ostream& os, const std::string& name, const Matrix& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols();
  for (Eigen::Index i = 0; i < m.size(); ++i) os << ' ' << m.data()[i];
  os << '\n';
}

Matrix read_matrix(std::istream& is, const std::string& expected_name) {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> name >> rows >> cols) || name != expected_name) {
    throw LoadError("checkpoint: expected array '" + expected_name + "', found '" + name + "'");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!(is >> m.data()[i])) throw LoadError("checkpoint: truncated array '" + expected_name + "'");
  }
  return m;
}

}  // namespace

void ControllerConfig::check() const {
  if (hidden_size == 0) throw ConfigError("controller: hidden_size must be positive");
  if (predictor_widths.empty() || predictor_widths.back() != 1) {
    throw ConfigError("controller: predictor widths must end in 1");
  }
  if (std::find(predictor_widths.begin(), predictor_widths.end(), 0u) != predictor_widths.end()) {
    throw ConfigError("controller: predictor widths must be positive");
  }
  if (!(loss_weight_lambda >= 0.0 && loss_weight_lambda <= 1.0)) {
    throw ConfigError("controller: loss_weight_lambda must lie in [0, 1]");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("controller: learning_rate must be positive");
  if (!(predictor_learning_rate > 0.0)) throw ConfigError("controller: predictor_learning_rate must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("controller: dropout_rate must lie in [0, 1)");
  if (upsample_ratio == 0) throw ConfigError("controller: upsample_ratio must be at least 1");
  if (batch_size == 0) throw ConfigError("controller: batch_size must be positive");
  if (!(grad_clip > 0.0)) throw ConfigError("controller: grad_clip must be positive");
}

// ---------------------------------------------------------------------------
// Dataset

void Dataset::add(LabeledArch record) {
  if (!(record.accuracy >= 0.0 && record.accuracy <= 1.0)) {
    throw UsageError("dataset: accuracy " + std::to_string(record.accuracy) + " outside [0, 1]");
  }
  const ArchKey key = canonical_key(record.arch);
  const bool known = contains_ground_truth(key);
  if (record.source == LabelSource::kGroundTruth) {
    if (known) throw UsageError("dataset: duplicate ground-truth architecture");
    ground_truth_keys_.insert(std::lower_bound(ground_truth_keys_.begin(), ground_truth_keys_.end(), key), key);
    // Ground truth takes precedence over earlier pseudo labels of the same cell.
    std::erase_if(records_, [&](const LabeledArch& r) {
      return r.source == LabelSource::kPseudo && canonical_key(r.arch) == key;
    });
  } else if (known) {
    throw UsageError("dataset: pseudo label for a ground-truth architecture");
  }
  records_.push_back(std::move(record));
}

bool Dataset::contains_ground_truth(ArchKey key) const {
  return std::binary_search(ground_truth_keys_.begin(), ground_truth_keys_.end(), key);
}

std::size_t Dataset::count(LabelSource source) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [&](const LabeledArch& r) { return r.source == source; }));
}

// ---------------------------------------------------------------------------
// Model

struct ControllerModel::Bound {
  Var enc_embedding, enc_w_input, enc_w_hidden, enc_bias;
  std::vector<Var> pred_weights, pred_biases;
  Var dec_embedding, dec_w_input, dec_w_hidden, dec_bias, out_weights, out_bias;
};

ControllerModel::ControllerModel(SearchSpaceSpec space, ControllerConfig config, std::uint64_t seed)
    : space_(std::move(space)), config_(std::move(config)), layout_(space_) {
  space_.check();
  config_.check();
  const std::size_t h = config_.hidden_size;
  const std::size_t v = layout_.vocab_size();
  params_.enc_embedding = Tensor2("encoder.embedding", v, h);
  params_.enc_w_input = Tensor2("encoder.w_input", h, 4 * h);
  params_.enc_w_hidden = Tensor2("encoder.w_hidden", h, 4 * h);
  params_.enc_bias = Tensor2("encoder.bias", 1, 4 * h);
  std::size_t in = h;
  for (std::size_t l = 0; l < config_.predictor_widths.size(); ++l) {
    const std::size_t out = config_.predictor_widths[l];
    params_.pred_weights.emplace_back("predictor.w" + std::to_string(l), in, out);
    params_.pred_biases.emplace_back("predictor.b" + std::to_string(l), 1, out);
    in = out;
  }
  params_.dec_embedding = Tensor2("decoder.embedding", v, h);
  params_.dec_w_input = Tensor2("decoder.w_input", 2 * h, 4 * h);
  params_.dec_w_hidden = Tensor2("decoder.w_hidden", h, 4 * h);
  params_.dec_bias = Tensor2("decoder.bias", 1, 4 * h);
  params_.out_weights = Tensor2("decoder.out_w", h, v);
  params_.out_bias = Tensor2("decoder.out_b", 1, v);
  reinitialize(seed);
}

void ControllerModel::reinitialize(std::uint64_t seed) {
  Rng rng(seed);
  for (Tensor2* p : parameters()) init_uniform(*p, config_.init_scale, rng);
  adam_.assign(parameters().size(), grad::AdamState{});
  const auto params = parameters();
  const auto pred = predictor_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool in_predictor = std::find(pred.begin(), pred.end(), params[i]) != pred.end();
    adam_[i].learning_rate = in_predictor ? config_.predictor_learning_rate : config_.learning_rate;
  }
  target_low_ = 0.0;
  target_span_ = 1.0;
  trained_ = false;
}

void ControllerModel::set_target_range(double low, double span) {
  if (!(std::isfinite(low) && span > 0.0 && std::isfinite(span))) {
    throw UsageError("controller: target range needs a finite low and a positive span");
  }
  target_low_ = low;
  target_span_ = span;
}

std::vector<Tensor2*> ControllerModel::parameters() {
  std::vector<Tensor2*> out = {&params_.enc_embedding, &params_.enc_w_input, &params_.enc_w_hidden,
                               &params_.enc_bias};
  for (std::size_t l = 0; l < params_.pred_weights.size(); ++l) {
    out.push_back(&params_.pred_weights[l]);
    out.push_back(&params_.pred_biases[l]);
  }
  for (Tensor2* p : decoder_parameters()) out.push_back(p);
  return out;
}

std::vector<const Tensor2*> ControllerModel::parameters() const {
  auto mut = const_cast<ControllerModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<Tensor2*> ControllerModel::decoder_parameters() {
  return {&params_.dec_embedding, &params_.dec_w_input, &params_.dec_w_hidden,
          &params_.dec_bias,      &params_.out_weights, &params_.out_bias};
}

std::vector<Tensor2*> ControllerModel::predictor_parameters() {
  std::vector<Tensor2*> out;
  for (std::size_t l = 0; l < params_.pred_weights.size(); ++l) {
    out.push_back(&params_.pred_weights[l]);
    out.push_back(&params_.pred_biases[l]);
  }
  return out;
}

ControllerModel::Bound ControllerModel::bind_constants(Tape& tape) const {
  Bound b;
  b.enc_embedding = tape.constant(params_.enc_embedding.value);
  b.enc_w_input = tape.constant(params_.enc_w_input.value);
  b.enc_w_hidden = tape.constant(params_.enc_w_hidden.value);
  b.enc_bias = tape.constant(params_.enc_bias.value);
  for (std::size_t l = 0; l < params_.pred_weights.size(); ++l) {
    b.pred_weights.push_back(tape.constant(params_.pred_weights[l].value));
    b.pred_biases.push_back(tape.constant(params_.pred_biases[l].value));
  }
  b.dec_embedding = tape.constant(params_.dec_embedding.value);
  b.dec_w_input = tape.constant(params_.dec_w_input.value);
  b.dec_w_hidden = tape.constant(params_.dec_w_hidden.value);
  b.dec_bias = tape.constant(params_.dec_bias.value);
  b.out_weights = tape.constant(params_.out_weights.value);
  b.out_bias = tape.constant(params_.out_bias.value);
  return b;
}

ControllerModel::Bound ControllerModel::bind_trainable(Tape& tape) {
  Bound b;
  b.enc_embedding = tape.param(params_.enc_embedding);
  b.enc_w_input = tape.param(params_.enc_w_input);
  b.enc_w_hidden = tape.param(params_.enc_w_hidden);
  b.enc_bias = tape.param(params_.enc_bias);
  for (std::size_t l = 0; l < params_.pred_weights.size(); ++l) {
    b.pred_weights.push_back(tape.param(params_.pred_weights[l]));
    b.pred_biases.push_back(tape.param(params_.pred_biases[l]));
  }
  b.dec_embedding = tape.param(params_.dec_embedding);
  b.dec_w_input = tape.param(params_.dec_w_input);
  b.dec_w_hidden = tape.param(params_.dec_w_hidden);
  b.dec_bias = tape.param(params_.dec_bias);
  b.out_weights = tape.param(params_.out_weights);
  b.out_bias = tape.param(params_.out_bias);
  return b;
}

void ControllerModel::check_tokens(std::span<const TokenSequence> tokens) const {
  for (const auto& t : tokens) {
    if (t.size() != layout_.length()) {
      throw DimensionError("controller: token sequence of length " + std::to_string(t.size()) + ", layout needs " +
                           std::to_string(layout_.length()));
    }
    for (std::size_t pos = 0; pos < t.size(); ++pos) {
      if (t[pos] < 0 || static_cast<std::size_t>(t[pos]) >= layout_.vocab_size()) {
        throw DecodeError(pos, "token " + std::to_string(t[pos]) + " outside the controller alphabet");
      }
    }
  }
}

Var ControllerModel::encode_on(Tape& tape, const Bound& w, std::span<const TokenSequence> tokens) const {
  const std::size_t batch = tokens.size();
  const std::size_t steps = layout_.length() - 2;
  const auto h = static_cast<Eigen::Index>(config_.hidden_size);
  Var hidden = tape.constant(Matrix::Zero(static_cast<Eigen::Index>(batch), h));
  Var cell = tape.constant(Matrix::Zero(static_cast<Eigen::Index>(batch), h));
  Matrix mask(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(steps));
  std::vector<Var> states;
  states.reserve(steps);
  std::vector<int> ids(batch);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      ids[b] = tokens[b][t + 1];
      mask(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(t)) = ids[b] == kPad ? 0.0 : 1.0;
    }
    const Var x = tape.embedding(w.enc_embedding, ids);
    std::tie(hidden, cell) = tape.lstm_step(x, hidden, cell, w.enc_w_input, w.enc_w_hidden, w.enc_bias);
    states.push_back(hidden);
  }
  return tape.masked_mean(states, mask);
}

Var ControllerModel::predict_on(Tape& tape, const Bound& w, Var embedding, Rng* dropout_rng) const {
  const double keep = 1.0 - config_.dropout_rate;
  Var x = embedding;
  if (dropout_rng) x = tape.dropout(x, keep, *dropout_rng);
  for (std::size_t l = 0; l < w.pred_weights.size(); ++l) {
    x = tape.add_row(tape.matmul(x, w.pred_weights[l]), w.pred_biases[l]);
    if (l + 1 < w.pred_weights.size()) {
      x = tape.relu(x);
      if (dropout_rng) x = tape.dropout(x, keep, *dropout_rng);
    }
  }
  return tape.sigmoid(x);
}

Var ControllerModel::reconstruction_on(Tape& tape, const Bound& w, Var embedding,
                                       std::span<const TokenSequence> tokens) const {
  const std::size_t batch = tokens.size();
  const std::size_t steps = layout_.length() - 2;
  const std::size_t vocab = layout_.vocab_size();
  const auto h = static_cast<Eigen::Index>(config_.hidden_size);
  Var hidden = embedding;
  Var cell = tape.constant(Matrix::Zero(static_cast<Eigen::Index>(batch), h));
  std::vector<MaskState> states(batch, MaskState{0, std::vector<char>(space_.max_nodes, 0)});
  std::vector<int> prev(batch, kSos), target(batch);
  std::vector<char> legal(batch * vocab);
  std::vector<Var> losses;
  losses.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t pos = t + 1;
    const Var x = tape.concat_cols(tape.embedding(w.dec_embedding, prev), embedding);
    std::tie(hidden, cell) = tape.lstm_step(x, hidden, cell, w.dec_w_input, w.dec_w_hidden, w.dec_bias);
    const Var logits = tape.add_row(tape.matmul(hidden, w.out_weights), w.out_bias);
    for (std::size_t b = 0; b < batch; ++b) {
      fill_legal(layout_, space_.max_edges, pos, states[b], legal.data() + b * vocab);
      target[b] = tokens[b][pos];
      advance(layout_, pos, target[b], states[b]);
    }
    losses.push_back(tape.cross_entropy_sum(logits, target, legal));
    prev = target;
  }
  const std::vector<double> weights(losses.size(), 1.0 / static_cast<double>(batch * steps));
  return tape.weighted_sum(losses, weights);
}

ControllerModel::Loss ControllerModel::record_loss(Tape& tape, std::span<const TokenSequence> tokens,
                                                   std::span<const double> targets, Rng* dropout_rng) {
  if (tokens.empty() || tokens.size() != targets.size()) {
    throw DimensionError("controller: " + std::to_string(tokens.size()) + " sequences vs " +
                         std::to_string(targets.size()) + " targets");
  }
  check_tokens(tokens);
  const Bound w = bind_trainable(tape);
  const Var embedding = encode_on(tape, w, tokens);
  const Var pred = predict_on(tape, w, embedding, dropout_rng);
  Matrix y(static_cast<Eigen::Index>(targets.size()), 1);
  for (std::size_t i = 0; i < targets.size(); ++i)
    y(static_cast<Eigen::Index>(i), 0) = (targets[i] - target_low_) / target_span_;
  const Var regression = tape.mse(pred, y);
  const double lambda = config_.loss_weight_lambda;
  if (lambda >= 1.0) {
    // The decoder does not enter the objective at all.
    const Var zero = tape.constant(Matrix::Zero(1, 1));
    const Var terms[] = {regression};
    const double weights[] = {1.0};
    return {tape.weighted_sum(terms, weights), regression, zero};
  }
  const Var reconstruction = reconstruction_on(tape, w, embedding, tokens);
  const Var terms[] = {regression, reconstruction};
  const double weights[] = {lambda, 1.0 - lambda};
  return {tape.weighted_sum(terms, weights), regression, reconstruction};
}

void ControllerModel::zero_grad() {
  for (Tensor2* p : parameters()) p->zero_grad();
}

void ControllerModel::apply_gradients() {
  const auto params = parameters();
  grad::clip_grad_norm(params, config_.grad_clip);
  for (std::size_t i = 0; i < params.size(); ++i) grad::adam_update(*params[i], adam_[i]);
}

Matrix ControllerModel::encode_batch(std::span<const TokenSequence> tokens) const {
  if (tokens.empty()) return Matrix(0, static_cast<Eigen::Index>(config_.hidden_size));
  check_tokens(tokens);
  Tape tape;
  const Bound w = bind_constants(tape);
  return tape.value(encode_on(tape, w, tokens));
}

std::vector<double> ControllerModel::encode(const TokenSequence& tokens) const {
  const Matrix e = encode_batch(std::span<const TokenSequence>(&tokens, 1));
  return {e.data(), e.data() + e.size()};
}

std::vector<double> ControllerModel::predict_batch(const Matrix& embeddings) const {
  if (embeddings.cols() != static_cast<Eigen::Index>(config_.hidden_size)) {
    throw DimensionError("predict: embedding " + grad::shape_string(embeddings) + ", hidden size " +
                         std::to_string(config_.hidden_size));
  }
  if (embeddings.rows() == 0) return {};
  Tape tape;
  const Bound w = bind_constants(tape);
  const Matrix& out = tape.value(predict_on(tape, w, tape.constant(embeddings), nullptr));
  std::vector<double> acc(out.data(), out.data() + out.size());
  for (double& a : acc) a = target_low_ + target_span_ * a;
  return acc;
}

double ControllerModel::predict(std::span<const double> embedding) const {
  if (embedding.size() != config_.hidden_size) {
    throw DimensionError("predict: embedding of length " + std::to_string(embedding.size()) + ", hidden size " +
                         std::to_string(config_.hidden_size));
  }
  Matrix e(1, static_cast<Eigen::Index>(embedding.size()));
  std::copy(embedding.begin(), embedding.end(), e.data());
  return predict_batch(e).front();
}

std::vector<double> ControllerModel::predict_gradient(std::span<const double> embedding) const {
  if (embedding.size() != config_.hidden_size) {
    throw DimensionError("predict_gradient: embedding of length " + std::to_string(embedding.size()) +
                         ", hidden size " + std::to_string(config_.hidden_size));
  }
  Matrix e(1, static_cast<Eigen::Index>(embedding.size()));
  std::copy(embedding.begin(), embedding.end(), e.data());
  Tape tape;
  const Bound w = bind_constants(tape);
  const Var ev = tape.constant(e);
  tape.backward(predict_on(tape, w, ev, nullptr));
  const Matrix& g = tape.grad(ev);
  if (!g.allFinite()) throw NumericError("predict_gradient: non-finite gradient");
  std::vector<double> out(g.data(), g.data() + g.size());
  for (double& v : out) v *= target_span_;
  return out;
}

std::vector<TokenSequence> ControllerModel::decode_batch(const Matrix& embeddings) const {
  if (embeddings.cols() != static_cast<Eigen::Index>(config_.hidden_size)) {
    throw DimensionError("decode: embedding " + grad::shape_string(embeddings) + ", hidden size " +
                         std::to_string(config_.hidden_size));
  }
  const auto batch = static_cast<std::size_t>(embeddings.rows());
  const std::size_t vocab = layout_.vocab_size();
  std::vector<TokenSequence> out(batch, TokenSequence(layout_.length(), kPad));
  if (batch == 0) return out;
  Tape tape;
  const Bound w = bind_constants(tape);
  const Var e = tape.constant(embeddings);
  Var hidden = e;
  Var cell = tape.constant(Matrix::Zero(embeddings.rows(), embeddings.cols()));
  std::vector<MaskState> states(batch, MaskState{0, std::vector<char>(space_.max_nodes, 0)});
  std::vector<int> prev(batch, kSos);
  std::vector<char> legal(vocab);
  for (std::size_t pos = 1; pos + 1 < layout_.length(); ++pos) {
    const Var x = tape.concat_cols(tape.embedding(w.dec_embedding, prev), e);
    std::tie(hidden, cell) = tape.lstm_step(x, hidden, cell, w.dec_w_input, w.dec_w_hidden, w.dec_bias);
    const Matrix& logits = tape.value(tape.add_row(tape.matmul(hidden, w.out_weights), w.out_bias));
    for (std::size_t b = 0; b < batch; ++b) {
      fill_legal(layout_, space_.max_edges, pos, states[b], legal.data());
      int best = -1;
      for (std::size_t k = 0; k < vocab; ++k) {
        if (legal[k] && (best < 0 || logits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) >
                                         logits(static_cast<Eigen::Index>(b), best))) {
          best = static_cast<int>(k);
        }
      }
      out[b][pos] = best;
      advance(layout_, pos, best, states[b]);
      prev[b] = best;
    }
  }
  for (auto& t : out) {
    t.front() = kSos;
    t.back() = kEos;
  }
  return out;
}

std::vector<TokenSequence> ControllerModel::teacher_forced_argmax(std::span<const TokenSequence> tokens) const {
  std::vector<TokenSequence> out(tokens.size(), TokenSequence(layout_.length(), kPad));
  if (tokens.empty()) return out;
  check_tokens(tokens);
  const std::size_t batch = tokens.size();
  const std::size_t vocab = layout_.vocab_size();
  Tape tape;
  const Bound w = bind_constants(tape);
  const Var e = encode_on(tape, w, tokens);
  Var hidden = e;
  Var cell = tape.constant(Matrix::Zero(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(hidden_size())));
  std::vector<MaskState> states(batch, MaskState{0, std::vector<char>(space_.max_nodes, 0)});
  std::vector<int> prev(batch, kSos);
  std::vector<char> legal(vocab);
  for (std::size_t pos = 1; pos + 1 < layout_.length(); ++pos) {
    const Var x = tape.concat_cols(tape.embedding(w.dec_embedding, prev), e);
    std::tie(hidden, cell) = tape.lstm_step(x, hidden, cell, w.dec_w_input, w.dec_w_hidden, w.dec_bias);
    const Matrix& logits = tape.value(tape.add_row(tape.matmul(hidden, w.out_weights), w.out_bias));
    for (std::size_t b = 0; b < batch; ++b) {
      fill_legal(layout_, space_.max_edges, pos, states[b], legal.data());
      int best = -1;
      for (std::size_t k = 0; k < vocab; ++k) {
        if (legal[k] && (best < 0 || logits(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) >
                                         logits(static_cast<Eigen::Index>(b), best))) {
          best = static_cast<int>(k);
        }
      }
      out[b][pos] = best;
      prev[b] = tokens[b][pos];
      advance(layout_, pos, prev[b], states[b]);
    }
  }
  for (auto& t : out) {
    t.front() = kSos;
    t.back() = kEos;
  }
  return out;
}

TokenSequence ControllerModel::decode(std::span<const double> embedding) const {
  if (embedding.size() != config_.hidden_size) {
    throw DimensionError("decode: embedding of length " + std::to_string(embedding.size()) + ", hidden size " +
                         std::to_string(config_.hidden_size));
  }
  Matrix e(1, static_cast<Eigen::Index>(embedding.size()));
  std::copy(embedding.begin(), embedding.end(), e.data());
  return decode_batch(e).front();
}

std::vector<double> ControllerModel::predict_architectures(std::span<const CellGraph> archs) const {
  std::vector<TokenSequence> tokens;
  tokens.reserve(archs.size());
  for (const auto& g : archs) tokens.push_back(encode_tokens(g, space_));
  return predict_batch(encode_batch(tokens));
}

double ControllerModel::predict_architecture(const CellGraph& g) const {
  return predict_architectures(std::span<const CellGraph>(&g, 1)).front();
}

void ControllerModel::save(std::ostream& os) const {
  const auto old_precision = os.precision(17);
  os << "seminas-controller 1\n";
  os << "max_nodes " << space_.max_nodes << "\nmax_edges " << space_.max_edges << "\nops";
  for (const auto& op : space_.op_vocabulary) os << ' ' << op;
  os << "\nhidden_size " << config_.hidden_size << "\npredictor_widths";
  for (auto wdt : config_.predictor_widths) os << ' ' << wdt;
  os << "\nloss_weight_lambda " << config_.loss_weight_lambda << "\nlearning_rate " << config_.learning_rate
     << "\npredictor_learning_rate " << config_.predictor_learning_rate
     << "\nepochs_supervised " << config_.epochs_supervised << "\nepochs_semi " << config_.epochs_semi
     << "\ndropout_rate " << config_.dropout_rate << "\nupsample_ratio " << config_.upsample_ratio
     << "\nbatch_size " << config_.batch_size << "\ngrad_clip " << config_.grad_clip << "\ninit_scale "
     << config_.init_scale << "\nwarm_start " << (config_.warm_start ? 1 : 0) << "\ncosine_decay " << (config_.cosine_decay ? 1 : 0)
     << "\nnormalize_targets " << (config_.normalize_targets ? 1 : 0) << "\ntarget_range " << target_low_ << ' '
     << target_span_ << "\ntrained " << (trained_ ? 1 : 0) << '\n';
  const auto params = parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    write_matrix(os, params[i]->name, params[i]->value);
    os << "adam " << adam_[i].step << '\n';
    write_matrix(os, params[i]->name + ".m", adam_[i].first_moment.size() ? adam_[i].first_moment : Matrix(0, 0));
    write_matrix(os, params[i]->name + ".v", adam_[i].second_moment.size() ? adam_[i].second_moment : Matrix(0, 0));
  }
  os << "end\n";
  os.precision(old_precision);
}

ControllerModel ControllerModel::load(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "seminas-controller 1") throw LoadError("checkpoint: bad header");
  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(is >> k) || k != key) throw LoadError("checkpoint: expected '" + key + "', found '" + k + "'");
  };
  SearchSpaceSpec space;
  ControllerConfig cfg;
  expect("max_nodes");
  is >> space.max_nodes;
  expect("max_edges");
  is >> space.max_edges;
  expect("ops");
  std::getline(is, line);
  {
    std::istringstream ops(line);
    space.op_vocabulary.clear();
    for (std::string op; ops >> op;) space.op_vocabulary.push_back(op);
  }
  expect("hidden_size");
  is >> cfg.hidden_size;
  expect("predictor_widths");
  std::getline(is, line);
  {
    std::istringstream ws(line);
    cfg.predictor_widths.clear();
    for (std::size_t wdt; ws >> wdt;) cfg.predictor_widths.push_back(wdt);
  }
  int warm = 1, cosine = 1, normalize = 1, trained = 0;
  double low = 0.0, span = 1.0;
  expect("loss_weight_lambda");
  is >> cfg.loss_weight_lambda;
  expect("learning_rate");
  is >> cfg.learning_rate;
  expect("predictor_learning_rate");
  is >> cfg.predictor_learning_rate;
  expect("epochs_supervised");
  is >> cfg.epochs_supervised;
  expect("epochs_semi");
  is >> cfg.epochs_semi;
  expect("dropout_rate");
  is >> cfg.dropout_rate;
  expect("upsample_ratio");
  is >> cfg.upsample_ratio;
  expect("batch_size");
  is >> cfg.batch_size;
  expect("grad_clip");
  is >> cfg.grad_clip;
  expect("init_scale");
  is >> cfg.init_scale;
  expect("warm_start");
  is >> warm;
  expect("cosine_decay");
  is >> cosine;
  expect("normalize_targets");
  is >> normalize;
  expect("target_range");
  is >> low >> span;
  expect("trained");
  is >> trained;
  if (!is) throw LoadError("checkpoint: malformed config block");
  cfg.warm_start = warm != 0;
  cfg.cosine_decay = cosine != 0;
  cfg.normalize_targets = normalize != 0;

  ControllerModel model(space, cfg, 0);
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix v = read_matrix(is, params[i]->name);
    if (v.rows() != params[i]->value.rows() || v.cols() != params[i]->value.cols()) {
      throw LoadError("checkpoint: array '" + params[i]->name + "' has shape " + grad::shape_string(v) +
                      ", expected " + grad::shape_string(params[i]->value));
    }
    params[i]->value = std::move(v);
    params[i]->zero_grad();
    expect("adam");
    is >> model.adam_[i].step;
    model.adam_[i].first_moment = read_matrix(is, params[i]->name + ".m");
    model.adam_[i].second_moment = read_matrix(is, params[i]->name + ".v");
  }
  expect("end");
  model.set_target_range(low, span);
  model.trained_ = trained != 0;
  return model;
}

// ---------------------------------------------------------------------------
// Training

TrainingReport fit_epochs(ControllerModel& model, std::span<const LabeledArch> data, std::size_t epochs, Rng& rng) {
  if (data.empty()) throw UsageError("fit: empty dataset");
  std::vector<TokenSequence> tokens;
  std::vector<double> targets;
  tokens.reserve(data.size());
  targets.reserve(data.size());
  for (const auto& r : data) {
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw UsageError("fit: accuracy outside [0, 1]");
    tokens.push_back(encode_tokens(r.arch, model.space()));
    targets.push_back(r.accuracy);
  }
  const std::size_t batch_size = model.config().batch_size;
  TrainingReport report;
  report.records = data.size();
  std::vector<std::size_t> order(data.size());
  std::vector<TokenSequence> bt;
  std::vector<double> by;
  if (model.config().normalize_targets) {
    double low = 1.0, high = 0.0;
    for (const auto& r : data) {
      if (r.source != LabelSource::kGroundTruth) continue;
      low = std::min(low, r.accuracy);
      high = std::max(high, r.accuracy);
    }
    // Fewer than two distinct ground-truth values leave the map unchanged.
    if (high > low) model.set_target_range(low, high - low);
  }
  auto& adam = model.adam_states();
  std::vector<double> base_lr(adam.size());
  for (std::size_t i = 0; i < adam.size(); ++i) base_lr[i] = adam[i].learning_rate;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    if (model.config().cosine_decay) {
      const double t = (static_cast<double>(epoch) + 0.5) / static_cast<double>(epochs);
      for (std::size_t i = 0; i < adam.size(); ++i)
        adam[i].learning_rate = 0.5 * base_lr[i] * (1.0 + std::cos(std::numbers::pi * t));
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    EpochLoss sum;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      bt.clear();
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        bt.push_back(tokens[order[i]]);
        by.push_back(targets[order[i]]);
      }
      Tape tape;
      const auto loss = model.record_loss(tape, bt, by, model.config().dropout_rate > 0.0 ? &rng : nullptr);
      const double total = tape.scalar(loss.total);
      if (!std::isfinite(total)) throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch));
      model.zero_grad();
      tape.backward(loss.total);
      model.apply_gradients();
      const double n = static_cast<double>(end - start);
      sum.regression += n * tape.scalar(loss.regression);
      sum.reconstruction += n * tape.scalar(loss.reconstruction);
    }
    sum.regression /= static_cast<double>(order.size());
    sum.reconstruction /= static_cast<double>(order.size());
    report.epochs.push_back(sum);
  }
  for (std::size_t i = 0; i < adam.size(); ++i) adam[i].learning_rate = base_lr[i];
  model.mark_trained();
  return report;
}

TrainingReport fit_supervised(ControllerModel& model, const Dataset& data, Rng& rng) {
  return fit_epochs(model, data.records(), model.config().epochs_supervised, rng);
}

Dataset pseudo_label(const ControllerModel& model, std::span<const CellGraph> archs, const Dataset& known) {
  if (!model.trained()) throw UsageError("pseudo_label: model has not been trained");
  std::vector<CellGraph> keep;
  keep.reserve(archs.size());
  for (const auto& g : archs)
    if (!known.contains_ground_truth(canonical_key(g))) keep.push_back(g);
  Dataset out;
  if (keep.empty()) return out;
  // Chunked so the tape of one forward pass stays small.
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < keep.size(); start += kChunk) {
    const std::size_t end = std::min(keep.size(), start + kChunk);
    const auto preds = model.predict_architectures(std::span<const CellGraph>(keep).subspan(start, end - start));
    for (std::size_t i = start; i < end; ++i) out.add({keep[i], preds[i - start], LabelSource::kPseudo});
  }
  return out;
}

TrainingSet upsample(const Dataset& data, std::size_t ratio) {
  if (ratio == 0) throw UsageError("upsample: ratio must be at least 1");
  TrainingSet out;
  out.reserve(data.count(LabelSource::kGroundTruth) * ratio + data.count(LabelSource::kPseudo));
  for (std::size_t k = 0; k < ratio; ++k)
    for (const auto& r : data.records())
      if (r.source == LabelSource::kGroundTruth) out.push_back(r);
  for (const auto& r : data.records())
    if (r.source == LabelSource::kPseudo) out.push_back(r);
  return out;
}

SemiSupervisedReport fit_semi_supervised(ControllerModel& model, const Dataset& labeled,
                                         std::span<const CellGraph> unlabeled, Rng& rng,
                                         std::optional<std::size_t> supervised_epochs) {
  if (labeled.empty()) throw UsageError("fit_semi_supervised: no labeled architectures");
  SemiSupervisedReport report;
  report.supervised =
      fit_epochs(model, labeled.records(), supervised_epochs.value_or(model.config().epochs_supervised), rng);
  report.pseudo = pseudo_label(model, unlabeled, labeled);
  const Dataset& pseudo = report.pseudo;
  report.pseudo_labeled = pseudo.size();

  Dataset mixed = labeled;
  for (const auto& r : pseudo.records()) mixed.add(r);
  // Up-sampling only balances labeled against pseudo-labeled records; with no
  // pseudo labels the second phase sees the labeled set once.
  const TrainingSet train = upsample(mixed, pseudo.empty() ? 1 : model.config().upsample_ratio);
  if (!model.config().warm_start) model.reinitialize(rng.next());
  report.semi = fit_epochs(model, train, model.config().epochs_semi, rng);
  return report;
}

double reconstruction_accuracy(const ControllerModel& model, std::span<const CellGraph> archs) {
  if (archs.empty()) return 0.0;
  std::vector<TokenSequence> tokens;
  for (const auto& g : archs) tokens.push_back(encode_tokens(g, model.space()));
  std::size_t hits = 0;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < tokens.size(); start += kChunk) {
    const std::size_t end = std::min(tokens.size(), start + kChunk);
    const std::span<const TokenSequence> chunk(tokens.data() + start, end - start);
    const auto decoded = model.decode_batch(model.encode_batch(chunk));
    for (std::size_t i = 0; i < decoded.size(); ++i) hits += decoded[i] == chunk[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(archs.size());
}

double teacher_forced_token_accuracy(const ControllerModel& model, std::span<const CellGraph> archs) {
  if (archs.empty()) return 0.0;
  std::vector<TokenSequence> tokens;
  for (const auto& g : archs) tokens.push_back(encode_tokens(g, model.space()));
  std::size_t correct = 0, total = 0;
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < tokens.size(); start += kChunk) {
    const std::size_t end = std::min(tokens.size(), start + kChunk);
    const std::span<const TokenSequence> chunk(tokens.data() + start, end - start);
    const auto pred = model.teacher_forced_argmax(chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      for (std::size_t pos = 1; pos + 1 < chunk[i].size(); ++pos) {
        correct += pred[i][pos] == chunk[i][pos] ? 1 : 0;
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace seminas
