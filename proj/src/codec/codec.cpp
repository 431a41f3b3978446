#include "steerbench/codec.hpp"

#include "steerbench/errors.hpp"
#include "steerbench/tensor_archive.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace steerbench::codec {

using json = nlohmann::json;

std::string to_string(CodecKind kind) {
    switch (kind) {
    case CodecKind::LogitLens: return "logit_lens";
    case CodecKind::TunedLens: return "tuned_lens";
    case CodecKind::SAE: return "sae";
    case CodecKind::Probe: return "probe";
    case CodecKind::SupervisedDict: return "supervised_dict";
    }
    return "unknown";
}

CodecKind codec_kind_from_string(const std::string &s) {
    if (s == "logit_lens") return CodecKind::LogitLens;
    if (s == "tuned_lens") return CodecKind::TunedLens;
    if (s == "sae") return CodecKind::SAE;
    if (s == "probe") return CodecKind::Probe;
    if (s == "supervised_dict") return CodecKind::SupervisedDict;
    throw ContractError("unknown codec kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Activation

Activation Activation::jump_relu(Vector threshold) {
    Activation a(Type::JumpReLU);
    a.threshold_ = std::move(threshold);
    return a;
}

Activation Activation::top_k(int k) {
    Activation a(Type::TopK);
    a.k_ = k;
    return a;
}

bool Activation::relu_family() const {
    return type_ == Type::ReLU || type_ == Type::JumpReLU || type_ == Type::TopK;
}

void Activation::validate(Eigen::Index n_features) const {
    if (type_ == Type::JumpReLU && threshold_.size() != n_features)
        throw ContractError("JumpReLU threshold length " + std::to_string(threshold_.size()) +
                            " != feature count " + std::to_string(n_features));
    if (type_ == Type::TopK && (k_ < 1 || k_ > n_features))
        throw ContractError("TopK k=" + std::to_string(k_) + " outside [1, " + std::to_string(n_features) + "]");
}

void Activation::apply(Vector &v) const {
    switch (type_) {
    case Type::Identity:
        return;
    case Type::ReLU:
        v = v.cwiseMax(0.0);
        return;
    case Type::JumpReLU:
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (!(v[i] > threshold_[i])) v[i] = 0.0;
        v = v.cwiseMax(0.0);
        return;
    case Type::TopK: {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(v.size()));
        std::iota(order.begin(), order.end(), 0);
        // ties resolved toward the lower index
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] > v[b]; });
        Vector out = Vector::Zero(v.size());
        for (int i = 0; i < k_; ++i) out[order[static_cast<std::size_t>(i)]] = std::max(0.0, v[order[static_cast<std::size_t>(i)]]);
        v = std::move(out);
        return;
    }
    case Type::Sigmoid:
        v = v.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
        return;
    case Type::Softmax: {
        const double m = v.maxCoeff();
        Vector e = (v.array() - m).exp();
        v = e / e.sum();
        return;
    }
    }
}

std::string Activation::name() const {
    switch (type_) {
    case Type::Identity: return "identity";
    case Type::ReLU: return "relu";
    case Type::JumpReLU: return "jumprelu";
    case Type::TopK: return "topk";
    case Type::Sigmoid: return "sigmoid";
    case Type::Softmax: return "softmax";
    }
    return "unknown";
}

Activation Activation::from_name(const std::string &name, int k, Vector threshold) {
    if (name == "identity") return identity();
    if (name == "relu") return relu();
    if (name == "jumprelu") return jump_relu(std::move(threshold));
    if (name == "topk") return top_k(k);
    if (name == "sigmoid") return sigmoid();
    if (name == "softmax") return softmax();
    throw ContractError("unknown activation '" + name + "'");
}

// ---------------------------------------------------------------------------
// Codec

Codec::Codec(CodecKind kind, Dictionary dictionary, Activation activation, Matrix decoder, Provenance meta,
             std::optional<InputNorm> input_norm)
    : kind_(kind), dict_(std::move(dictionary)), activation_(std::move(activation)), decoder_(std::move(decoder)),
      meta_(std::move(meta)), input_norm_(std::move(input_norm)) {
    const auto n = dict_.directions.rows();
    const auto d = dict_.directions.cols();
    require(n > 0 && d > 0, "codec dictionary must be non-empty");
    require(static_cast<Eigen::Index>(dict_.labels.size()) == n,
            "dictionary has " + std::to_string(n) + " rows but " + std::to_string(dict_.labels.size()) + " labels");
    require(decoder_.rows() == n && decoder_.cols() == d,
            "decoder shape " + std::to_string(decoder_.rows()) + "x" + std::to_string(decoder_.cols()) +
                " does not match dictionary " + std::to_string(n) + "x" + std::to_string(d));
    require(!dict_.bias_in || dict_.bias_in->size() == n, "bias_in length must equal feature count");
    require(!dict_.bias_out || dict_.bias_out->size() == d, "bias_out length must equal hidden size");
    require(!input_norm_ || (input_norm_->gain.size() == d && input_norm_->bias.size() == d),
            "input norm parameters must have hidden size");
    require(dict_.directions.allFinite() && decoder_.allFinite(), "codec matrices must be finite");
    activation_.validate(n);
    if (kind_ == CodecKind::SAE)
        require(!meta_.decoder_is_pseudoinverse, "SAE codecs must use the checkpoint decoder, not a pseudoinverse");
    if (!meta_.allow_zero_rows) {
        const Vector norms = dict_.directions.rowwise().norm();
        for (Eigen::Index i = 0; i < n; ++i)
            require(norms[i] > 0.0, "dictionary row " + std::to_string(i) + " is all zero");
    }
    id_ = to_string(kind_) + ":" + meta_.model_id + ":L" + std::to_string(meta_.layer);
}

Codec Codec::with_input_norm(std::optional<InputNorm> norm) const {
    Codec copy = *this;
    require(!norm || (norm->gain.size() == hidden_size() && norm->bias.size() == hidden_size()),
            "input norm parameters must have hidden size");
    copy.input_norm_ = std::move(norm);
    return copy;
}

Vector Codec::encode(const Vector &x) const {
    require(x.size() == hidden_size(), "encode: latent length " + std::to_string(x.size()) + " != hidden size " +
                                           std::to_string(hidden_size()));
    Vector z;
    if (input_norm_) {
        const double mean = x.mean();
        const Vector centered = x.array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(x.size());
        const Vector normed =
            (centered / std::sqrt(var + input_norm_->eps)).cwiseProduct(input_norm_->gain) + input_norm_->bias;
        z = dict_.directions * normed;
    } else {
        z = dict_.directions * x;
    }
    if (dict_.bias_in) z += *dict_.bias_in;
    activation_.apply(z);
    return z;
}

Vector Codec::decode(const Vector &z) const {
    require(z.size() == feature_count(), "decode: feature length " + std::to_string(z.size()) +
                                             " != feature count " + std::to_string(feature_count()));
    Vector x = decoder_.transpose() * z;
    if (dict_.bias_out) x += *dict_.bias_out;
    return x;
}

FeatureVector Codec::encode(const LatentVector &x) const { return {encode(x.values), id_}; }

LatentVector Codec::decode(const FeatureVector &z) const {
    require(z.codec_id.empty() || z.codec_id == id_, "feature vector belongs to codec " + z.codec_id);
    return {decode(z.values), meta_.layer, -1};
}

// ---------------------------------------------------------------------------

Matrix pseudoinverse(const Matrix &m, double rel_tolerance) {
    require(rel_tolerance > 0.0 && rel_tolerance < 1.0, "pseudoinverse: rel_tolerance must lie in (0, 1)");
    require(m.allFinite(), "pseudoinverse: matrix has non-finite entries");
    if (m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0) return Matrix::Zero(m.cols(), m.rows());

    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector &s = svd.singularValues();
    const double cutoff = rel_tolerance * s[0];
    Eigen::Index rank = 0;
    while (rank < s.size() && s[rank] > cutoff) ++rank;

    const Matrix v = svd.matrixV().leftCols(rank);
    const Matrix u = svd.matrixU().leftCols(rank);
    const Vector inv = s.head(rank).cwiseInverse();
    return v * inv.asDiagonal() * u.transpose();
}

double reconstruction_error(const Vector &x, const Codec &c) {
    const double norm = x.norm();
    if (!(norm > 0.0)) throw DegenerateInputError("reconstruction_error: zero-norm latent");
    return (c.decode(c.encode(x)) - x).norm() / norm;
}

double reconstruction_error(const LatentVector &x, const Codec &c) { return reconstruction_error(x.values, c); }

// ---------------------------------------------------------------------------
// Serialization

namespace {

Tensor to_tensor(const Matrix &m) {
    Tensor t;
    t.shape = {m.rows(), m.cols()};
    t.data.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            t.data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
    return t;
}

Tensor to_tensor(const Vector &v) {
    Tensor t;
    t.shape = {v.size()};
    t.data.resize(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    return t;
}

Matrix matrix_from(const Tensor &t, const std::string &name) {
    if (t.shape.size() != 2) throw LoadError("codec tensor '" + name + "' must be 2-D");
    Matrix m(t.shape[0], t.shape[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[static_cast<std::size_t>(r * m.cols() + c)];
    return m;
}

Vector vector_from(const Tensor &t) {
    Vector v(static_cast<Eigen::Index>(t.data.size()));
    for (std::size_t i = 0; i < t.data.size(); ++i) v[static_cast<Eigen::Index>(i)] = t.data[i];
    return v;
}

} // namespace

void save_codec(const Codec &c, const std::filesystem::path &archive, const std::filesystem::path &sidecar) {
    TensorArchive ar;
    const auto &dict = c.dictionary();
    ar.put("dict", to_tensor(dict.directions));
    ar.put("decoder", to_tensor(c.decoder()));
    if (dict.bias_in) ar.put("bias_in", to_tensor(*dict.bias_in));
    if (dict.bias_out) ar.put("bias_out", to_tensor(*dict.bias_out));
    if (c.activation().type() == Activation::Type::JumpReLU) ar.put("threshold", to_tensor(c.activation().threshold()));
    if (c.input_norm()) {
        ar.put("norm_gain", to_tensor(c.input_norm()->gain));
        ar.put("norm_bias", to_tensor(c.input_norm()->bias));
    }
    ar.save(archive);

    json meta;
    meta["kind"] = to_string(c.kind());
    meta["labels"] = dict.labels;
    meta["activation"] = {{"name", c.activation().name()}, {"k", c.activation().k()}};
    meta["provenance"] = {{"source", c.meta().source},
                          {"model_id", c.meta().model_id},
                          {"layer", c.meta().layer},
                          {"decoder_is_pseudoinverse", c.meta().decoder_is_pseudoinverse},
                          {"pinv_rel_tolerance", c.meta().pinv_rel_tolerance},
                          {"allow_zero_rows", c.meta().allow_zero_rows}};
    if (c.input_norm()) meta["input_norm_eps"] = c.input_norm()->eps;
    std::ofstream out(sidecar);
    if (!out) throw LoadError("cannot write codec sidecar " + sidecar.string());
    out << meta.dump(1, ' ', false, json::error_handler_t::replace) << "\n";
}

Codec load_codec(const std::filesystem::path &archive, const std::filesystem::path &sidecar) {
    const TensorArchive ar = TensorArchive::load(archive);
    std::ifstream in(sidecar);
    if (!in) throw LoadError("cannot open codec sidecar " + sidecar.string());
    json meta;
    try {
        in >> meta;
    } catch (const json::exception &e) {
        throw LoadError("malformed codec sidecar " + sidecar.string() + ": " + e.what());
    }

    Dictionary dict;
    dict.directions = matrix_from(ar.get("dict"), "dict");
    dict.labels = meta.at("labels").get<std::vector<std::string>>();
    if (ar.contains("bias_in")) dict.bias_in = vector_from(ar.get("bias_in"));
    if (ar.contains("bias_out")) dict.bias_out = vector_from(ar.get("bias_out"));
    Matrix decoder = matrix_from(ar.get("decoder"), "decoder");

    const auto &act = meta.at("activation");
    Vector threshold;
    if (ar.contains("threshold")) threshold = vector_from(ar.get("threshold"));
    Activation activation = Activation::from_name(act.at("name").get<std::string>(), act.value("k", 0), threshold);

    Provenance prov;
    const auto &p = meta.at("provenance");
    prov.source = p.value("source", archive.string());
    prov.model_id = p.value("model_id", "");
    prov.layer = p.value("layer", -1);
    prov.decoder_is_pseudoinverse = p.value("decoder_is_pseudoinverse", false);
    prov.pinv_rel_tolerance = p.value("pinv_rel_tolerance", 0.0);
    prov.allow_zero_rows = p.value("allow_zero_rows", false);

    std::optional<InputNorm> norm;
    if (ar.contains("norm_gain"))
        norm = InputNorm{vector_from(ar.get("norm_gain")), vector_from(ar.get("norm_bias")), meta.value("input_norm_eps", 1e-5)};

    return Codec(codec_kind_from_string(meta.at("kind").get<std::string>()), std::move(dict), std::move(activation),
                 std::move(decoder), std::move(prov), std::move(norm));
}

} // namespace steerbench::codec
