#pragma once

// Encoder-predictor-decoder accuracy surrogate.
//
//   encoder   LSTM over the architecture tokens; the embedding is the mean of
//             the hidden states at non-PAD positions.
//   predictor fully connected stack (ReLU between layers) ending in a sigmoid.
//   decoder   LSTM started from the embedding, fed [previous token; embedding]
//             at every step, emitting one token of the fixed layout per step.
//
// Training minimises  lambda * MSE(predict, accuracy)
//                   + (1 - lambda) * token cross-entropy (teacher forced).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seminas/grad.hpp"
#include "seminas/rng.hpp"
#include "seminas/search_space.hpp"

namespace seminas {

struct ControllerConfig {
  std::size_t hidden_size = 16;
  std::vector<std::size_t> predictor_widths = {16, 64, 1};
  double loss_weight_lambda = 0.8;  // weight of the regression term
  double learning_rate = 1e-2;            // encoder and decoder
  double predictor_learning_rate = 3e-3;  // predictor MLP
  std::size_t epochs_supervised = 200;
  std::size_t epochs_semi = 10;
  double dropout_rate = 0.1;
  std::size_t upsample_ratio = 1;
  std::size_t batch_size = 16;
  double grad_clip = 5.0;
  double init_scale = 0.1;
  bool warm_start = true;
  // Learning rate follows a half cosine from learning_rate towards 0 over
  // each training call instead of staying constant.
  bool cosine_decay = true;
  // Regression targets are mapped affinely so the ground-truth records of the
  // training set span [0, 1]; predictions are mapped back.
  bool normalize_targets = true;

  void check() const;  // throws ConfigError
};

enum class LabelSource { kGroundTruth, kPseudo };

struct LabeledArch {
  CellGraph arch;
  double accuracy = 0.0;
  LabelSource source = LabelSource::kGroundTruth;
};

// Ground-truth records are unique by canonical key; accuracies lie in [0, 1].
class Dataset {
 public:
  Dataset() = default;

  // Throws UsageError on a duplicate ground-truth architecture or an accuracy
  // outside [0, 1]. Pseudo records are not deduplicated here.
  void add(LabeledArch record);
  void add_ground_truth(const CellGraph& g, double accuracy) { add({g, accuracy, LabelSource::kGroundTruth}); }

  const std::vector<LabeledArch>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  bool contains_ground_truth(ArchKey key) const;
  std::size_t count(LabelSource source) const;

 private:
  std::vector<LabeledArch> records_;
  std::vector<ArchKey> ground_truth_keys_;  // sorted
};

// Training multiset: may repeat architectures (up-sampled records).
using TrainingSet = std::vector<LabeledArch>;

struct EpochLoss {
  double regression = 0.0;
  double reconstruction = 0.0;
};

struct TrainingReport {
  std::vector<EpochLoss> epochs;
  std::size_t records = 0;
};

struct SemiSupervisedReport {
  TrainingReport supervised;
  TrainingReport semi;
  std::size_t pseudo_labeled = 0;
  Dataset pseudo;  // the pseudo-labeled records used in the second phase
};

class ControllerModel {
 public:
  ControllerModel(SearchSpaceSpec space, ControllerConfig config, std::uint64_t seed);

  const ControllerConfig& config() const { return config_; }
  const SearchSpaceSpec& space() const { return space_; }
  const TokenLayout& layout() const { return layout_; }
  std::size_t hidden_size() const { return config_.hidden_size; }

  // Inference (dropout off, deterministic).
  std::vector<double> encode(const TokenSequence& tokens) const;
  grad::Matrix encode_batch(std::span<const TokenSequence> tokens) const;
  double predict(std::span<const double> embedding) const;
  std::vector<double> predict_batch(const grad::Matrix& embeddings) const;
  // d predict / d embedding.
  std::vector<double> predict_gradient(std::span<const double> embedding) const;
  // Greedy decoding under position and edge-budget masks; always parses.
  TokenSequence decode(std::span<const double> embedding) const;
  std::vector<TokenSequence> decode_batch(const grad::Matrix& embeddings) const;
  // Masked argmax at every position when the decoder is fed the true prefix.
  std::vector<TokenSequence> teacher_forced_argmax(std::span<const TokenSequence> tokens) const;

  double predict_architecture(const CellGraph& g) const;
  std::vector<double> predict_architectures(std::span<const CellGraph> archs) const;

  // Training interface.
  struct Loss {
    grad::Var total;
    grad::Var regression;
    grad::Var reconstruction;
  };
  // Records the joint loss of a batch on `tape` with the parameters as
  // trainable leaves. `dropout_rng` null disables dropout.
  Loss record_loss(grad::Tape& tape, std::span<const TokenSequence> tokens, std::span<const double> targets,
                   Rng* dropout_rng);

  std::vector<grad::Tensor2*> parameters();
  std::vector<const grad::Tensor2*> parameters() const;
  std::vector<grad::Tensor2*> decoder_parameters();
  std::vector<grad::Tensor2*> predictor_parameters();
  std::vector<grad::AdamState>& adam_states() { return adam_; }

  // Gradient step on the parameters (clip + Adam) after grads are filled.
  void apply_gradients();
  void zero_grad();

  // Affine map between accuracies and predictor outputs:
  // accuracy = low + span * sigmoid output. Identity until trained with
  // normalize_targets on.
  double target_low() const { return target_low_; }
  double target_span() const { return target_span_; }
  void set_target_range(double low, double span);

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  void reinitialize(std::uint64_t seed);

  // Checkpoint: structured text with config, parameter arrays and optimizer
  // state; values printed with 17 significant digits so load is bit-exact.
  void save(std::ostream& os) const;
  static ControllerModel load(std::istream& is);

 private:
  struct Params {
    grad::Tensor2 enc_embedding, enc_w_input, enc_w_hidden, enc_bias;
    std::vector<grad::Tensor2> pred_weights, pred_biases;
    grad::Tensor2 dec_embedding, dec_w_input, dec_w_hidden, dec_bias, out_weights, out_bias;
  };
  struct Bound;  // Params bound to tape nodes

  Bound bind_constants(grad::Tape& tape) const;
  Bound bind_trainable(grad::Tape& tape);
  grad::Var encode_on(grad::Tape& tape, const Bound& w, std::span<const TokenSequence> tokens) const;
  grad::Var predict_on(grad::Tape& tape, const Bound& w, grad::Var embedding, Rng* dropout_rng) const;
  grad::Var reconstruction_on(grad::Tape& tape, const Bound& w, grad::Var embedding,
                              std::span<const TokenSequence> tokens) const;
  void check_tokens(std::span<const TokenSequence> tokens) const;

  SearchSpaceSpec space_;
  ControllerConfig config_;
  TokenLayout layout_;
  Params params_;
  std::vector<grad::AdamState> adam_;
  double target_low_ = 0.0;
  double target_span_ = 1.0;
  bool trained_ = false;
};

// Joint training on `data` for `epochs` passes with minibatches shuffled by
// `rng` (dropout draws come from the same stream).
TrainingReport fit_epochs(ControllerModel& model, std::span<const LabeledArch> data, std::size_t epochs, Rng& rng);

// Alg. step "train f_e, f_p, f_d jointly on D" for config.epochs_supervised.
TrainingReport fit_supervised(ControllerModel& model, const Dataset& data, Rng& rng);

// Predicted accuracies for every architecture whose canonical key is not a
// ground-truth record of `known`.
Dataset pseudo_label(const ControllerModel& model, std::span<const CellGraph> archs, const Dataset& known);

// Ground-truth records repeated `ratio` times, followed by each pseudo record once.
TrainingSet upsample(const Dataset& data, std::size_t ratio);

// fit_supervised(labeled); pseudo_label(unlabeled); train config.epochs_semi
// epochs on upsample(labeled) + pseudo (warm start unless configured). With
// no pseudo records the labeled set is not up-sampled. `supervised_epochs`
// overrides config.epochs_supervised for the first phase.
SemiSupervisedReport fit_semi_supervised(ControllerModel& model, const Dataset& labeled,
                                         std::span<const CellGraph> unlabeled, Rng& rng,
                                         std::optional<std::size_t> supervised_epochs = std::nullopt);

// Fraction of exactly reconstructed architectures, decode(encode(g)) == g.
double reconstruction_accuracy(const ControllerModel& model, std::span<const CellGraph> archs);

// Teacher-forced per-token argmax accuracy (layout masks applied).
double teacher_forced_token_accuracy(const ControllerModel& model, std::span<const CellGraph> archs);

}  // namespace seminas
