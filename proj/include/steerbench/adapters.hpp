#pragma once

// Builders that turn each interpretability method into a Codec (lenses, SAEs,
// supervised dictionaries, probes) or an additive edit vector (steering
// vectors, probe weights).

#include "steerbench/codec.hpp"
#include "steerbench/runtime/model.hpp"
#include "steerbench/tensor_archive.hpp"
#include "steerbench/topic.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace steerbench::adapters {

using codec::Matrix;
using codec::Vector;

struct ContrastivePair {
    std::string positive;
    std::string negative;
};

// JSON lines: {"positive": ..., "negative": ...}. Throws LoadError.
std::vector<ContrastivePair> load_pairs(const std::filesystem::path &path);

struct SteeringVector {
    Vector v;
    int layer = -1;
    std::string topic;
    double norm = 0.0;
};

struct ProbeWeights {
    Vector w;
    double b = 0.0;
    int layer = -1;
    std::string topic;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double final_loss = 0.0;
    std::vector<std::string> warnings;
};

struct ProbeHyper {
    double lr = 0.05;
    int epochs = 2000;
    double l2 = 1e-4;
    std::uint64_t split_seed = 0;
    double test_fraction = 0.2;
    // Train accuracy below this floor adds a warning (not an error).
    double accuracy_floor = 1.0;
};

// Logit lens: D = unembedding, labels = token strings, identity activation,
// decoder = pinv(D) transposed into N x d.
codec::Codec build_logit_lens(const runtime::Model &model, int layer = -1, double rel_tolerance = 1e-6);

// The model's final LayerNorm, for the last-layer sanity check.
codec::InputNorm final_norm(const runtime::Model &model);

// h = x * A + b, with A in row-vector convention (d x d).
struct AffineTranslator {
    Matrix A;
    Vector b;
};

// Reads "A"/"b" (affine form) or "weight"/"bias" of a residual translator
// (h = x + x * weight^T + bias, torch Linear layout) from an archive.
AffineTranslator load_translator(const std::filesystem::path &archive, const std::string &prefix = "");

// encode(x) = ((x A + b) U^T); decode is the least-squares inverse of that
// affine map: x_hat = (z - U b) * pinv(U A^T)^T.
codec::Codec build_tuned_lens(const runtime::Model &model, const AffineTranslator &translator, int layer,
                              double rel_tolerance = 1e-6);

// SAE checkpoint: archive + metadata JSON
// {kind, model_id, layer, activation, k, labels | labels_path,
//  tensors: {W_enc, b_enc, W_dec, b_dec, threshold}, apply_b_dec_to_input}
// W_enc is d x N, W_dec is N x d. The codec keeps the checkpoint decoder.
codec::Codec load_sae(const std::filesystem::path &archive, const std::filesystem::path &metadata);

// Probe as an N = 1 sigmoid codec. Its decoder is the rank-1 least-squares
// reconstruction from the probe logit; diagnostics only, interventions with
// probes are additive.
codec::Codec probe_codec(const ProbeWeights &probe, const std::string &model_id);

// Residual at `layer` averaged over every token position of `text`.
Vector token_averaged_residual(const runtime::Model &model, int layer, std::string_view text);

// v = mean over pairs of (mean residual of positive - mean residual of negative).
SteeringVector train_steering_vector(const std::vector<ContrastivePair> &pairs, const runtime::Model &model, int layer,
                                     const std::string &topic = "");
// Same computation on precomputed per-sentence features.
Vector steering_from_features(const std::vector<Vector> &positive, const std::vector<Vector> &negative);

// Logistic loss with L2 penalty (l2/2 * ||w||^2), mean over samples.
double logistic_loss(const Vector &w, double b, const Matrix &X, const std::vector<int> &y, double l2);
void logistic_gradient(const Vector &w, double b, const Matrix &X, const std::vector<int> &y, double l2, Vector &grad_w,
                       double &grad_b);

// Full-batch gradient descent on rows of X (labels 0/1) with a seeded
// train/test split.
ProbeWeights fit_probe(const Matrix &X, const std::vector<int> &y, const ProbeHyper &hyper);
ProbeWeights train_probe(const std::vector<ContrastivePair> &pairs, const runtime::Model &model, int layer,
                         const ProbeHyper &hyper = {}, const std::string &topic = "");

struct FeatureSelection {
    std::vector<int> indices;
    std::vector<std::string> resolved; // token strings / labels, parallel to indices
    bool degraded = false;             // some word resolved to a leading sub-token
    std::vector<std::string> notes;
};

// Lens codecs resolve topic.lens_tokens through the tokenizer (leading token of
// multi-token words, flagged as degraded); SAE and supervised dictionaries look
// up topic.sae_feature[model_id].
FeatureSelection select_topic_feature(const codec::Codec &codec, const TopicSpec &topic,
                                      const runtime::Tokenizer &tokenizer, const std::string &model_id);

} // namespace steerbench::adapters
