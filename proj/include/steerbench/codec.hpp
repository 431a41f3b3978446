#pragma once

// Unified encoder/decoder abstraction over interpretability methods.
//
// Every method maps a residual-stream latent x (length d) to feature
// activations z (length N) and back:
//
//   encode:  z_i = act(<x, D_i> + bias_in_i)      D is N x d, row i = feature i
//   decode:  x_hat = z * decoder + bias_out        decoder is N x d
//
// Decoders are always explicit matrices built once at construction, so decode
// is a single affine map. Codec values are immutable and safe to share.

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace steerbench::codec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LatentVector {
    Vector values;
    int layer = -1;
    int position = -1; // -1 when position-free
};

struct FeatureVector {
    Vector values;
    std::string codec_id;
};

enum class CodecKind { LogitLens, TunedLens, SAE, Probe, SupervisedDict };

std::string to_string(CodecKind kind);
CodecKind codec_kind_from_string(const std::string &s);

class Activation {
public:
    enum class Type { Identity, ReLU, JumpReLU, TopK, Sigmoid, Softmax };

    static Activation identity() { return Activation(Type::Identity); }
    static Activation relu() { return Activation(Type::ReLU); }
    static Activation sigmoid() { return Activation(Type::Sigmoid); }
    static Activation softmax() { return Activation(Type::Softmax); }
    static Activation jump_relu(Vector threshold);
    // ReLU applied to the k largest pre-activations; everything else is zeroed.
    static Activation top_k(int k);

    Type type() const { return type_; }
    int k() const { return k_; }
    const Vector &threshold() const { return threshold_; }
    bool relu_family() const;

    // Checks parameters against the feature count N.
    void validate(Eigen::Index n_features) const;
    void apply(Vector &v) const;

    std::string name() const;
    static Activation from_name(const std::string &name, int k = 0, Vector threshold = {});

private:
    explicit Activation(Type t) : type_(t) {}
    Type type_;
    int k_ = 0;
    Vector threshold_;
};

struct Dictionary {
    Matrix directions; // N x d
    std::vector<std::string> labels;
    std::optional<Vector> bias_in;  // length N
    std::optional<Vector> bias_out; // length d
};

// Optional LayerNorm applied to x before encoding. Only used to check that the
// logit lens at the last layer reproduces the model's own prediction.
struct InputNorm {
    Vector gain;
    Vector bias;
    double eps = 1e-5;
};

struct Provenance {
    std::string source;   // checkpoint path or "computed"
    std::string model_id;
    int layer = -1;
    bool decoder_is_pseudoinverse = false;
    double pinv_rel_tolerance = 0.0;
    bool allow_zero_rows = false;
};

class Codec {
public:
    Codec(CodecKind kind, Dictionary dictionary, Activation activation, Matrix decoder, Provenance meta,
          std::optional<InputNorm> input_norm = std::nullopt);

    CodecKind kind() const { return kind_; }
    Eigen::Index feature_count() const { return dict_.directions.rows(); }
    Eigen::Index hidden_size() const { return dict_.directions.cols(); }

    const Dictionary &dictionary() const { return dict_; }
    const Activation &activation() const { return activation_; }
    const Matrix &decoder() const { return decoder_; }
    const Provenance &meta() const { return meta_; }
    const std::optional<InputNorm> &input_norm() const { return input_norm_; }
    const std::string &id() const { return id_; }

    // Copy with the input norm switched on or off.
    Codec with_input_norm(std::optional<InputNorm> norm) const;

    Vector encode(const Vector &x) const;
    Vector decode(const Vector &z) const;
    FeatureVector encode(const LatentVector &x) const;
    LatentVector decode(const FeatureVector &z) const;

private:
    CodecKind kind_;
    Dictionary dict_;
    Activation activation_;
    Matrix decoder_;
    Provenance meta_;
    std::optional<InputNorm> input_norm_;
    std::string id_;
};

// Moore-Penrose pseudoinverse via truncated SVD. Singular values below
// rel_tolerance * sigma_max are dropped. An all-zero matrix yields the zero
// matrix of transposed shape. Throws ContractError on non-finite input or a
// tolerance outside (0, 1).
Matrix pseudoinverse(const Matrix &m, double rel_tolerance = 1e-6);

// ||decode(encode(x)) - x|| / ||x||. Throws DegenerateInputError when x = 0.
double reconstruction_error(const LatentVector &x, const Codec &c);
double reconstruction_error(const Vector &x, const Codec &c);

// Archive holds tensors "dict", "decoder", "bias_in", "bias_out" (and
// "norm_gain"/"norm_bias" when an input norm is attached); the JSON sidecar
// carries kind, labels, activation and provenance.
void save_codec(const Codec &c, const std::filesystem::path &archive, const std::filesystem::path &sidecar);
Codec load_codec(const std::filesystem::path &archive, const std::filesystem::path &sidecar);

} // namespace steerbench::codec
