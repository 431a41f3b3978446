#include "steerbench/adapters.hpp"

#include "steerbench/errors.hpp"
#include "steerbench/runtime/forward.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace steerbench::adapters {

using json = nlohmann::json;

std::vector<ContrastivePair> load_pairs(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open contrastive pairs " + path.string());
    std::vector<ContrastivePair> pairs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            ContrastivePair p{j.at("positive").get<std::string>(), j.at("negative").get<std::string>()};
            if (p.positive.empty() || p.negative.empty()) throw LoadError("empty sentence");
            pairs.push_back(std::move(p));
        } catch (const std::exception &e) {
            throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Lenses

namespace {

Matrix unembedding(const runtime::Model &model) {
    const auto &c = model.config();
    const auto u = model.unembed();
    Matrix m(c.vocab_size, c.d_model);
    for (int r = 0; r < c.vocab_size; ++r)
        for (int k = 0; k < c.d_model; ++k)
            m(r, k) = u[static_cast<std::size_t>(r) * static_cast<std::size_t>(c.d_model) + static_cast<std::size_t>(k)];
    return m;
}

std::vector<std::string> token_labels(const runtime::Model &model) {
    const int v = model.config().vocab_size;
    std::vector<std::string> labels(static_cast<std::size_t>(v));
    for (int i = 0; i < v; ++i) {
        if (model.has_tokenizer() && i < model.tokenizer().vocab_size())
            labels[static_cast<std::size_t>(i)] = model.tokenizer().token_bytes(i);
        else
            labels[static_cast<std::size_t>(i)] = "<" + std::to_string(i) + ">";
    }
    return labels;
}

Vector to_vector(std::span<const float> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

Matrix tensor_matrix(const Tensor &t, const std::string &name) {
    if (t.shape.size() != 2) throw LoadError("tensor '" + name + "' must be 2-D, got " + shape_to_string(t.shape));
    Matrix m(t.shape[0], t.shape[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[static_cast<std::size_t>(r * m.cols() + c)];
    return m;
}

} // namespace

codec::Codec build_logit_lens(const runtime::Model &model, int layer, double rel_tolerance) {
    codec::Dictionary dict;
    dict.directions = unembedding(model);
    dict.labels = token_labels(model);
    Matrix decoder = codec::pseudoinverse(dict.directions, rel_tolerance).transpose();
    codec::Provenance meta;
    meta.source = "computed";
    meta.model_id = model.config().model_id;
    meta.layer = layer;
    meta.decoder_is_pseudoinverse = true;
    meta.pinv_rel_tolerance = rel_tolerance;
    return codec::Codec(codec::CodecKind::LogitLens, std::move(dict), codec::Activation::identity(), std::move(decoder),
                        std::move(meta));
}

codec::InputNorm final_norm(const runtime::Model &model) {
    return {to_vector(model.weights().ln_final_gain), to_vector(model.weights().ln_final_bias),
            static_cast<double>(model.config().layer_norm_eps)};
}

AffineTranslator load_translator(const std::filesystem::path &archive, const std::string &prefix) {
    const TensorArchive ar = TensorArchive::load(archive);
    AffineTranslator t;
    if (ar.contains(prefix + "A")) {
        t.A = tensor_matrix(ar.get(prefix + "A"), prefix + "A");
        t.b = to_vector(ar.get(prefix + "b").data);
    } else {
        const Matrix w = tensor_matrix(ar.get(prefix + "weight"), prefix + "weight");
        t.A = Matrix::Identity(w.rows(), w.cols()) + w.transpose();
        t.b = to_vector(ar.get(prefix + "bias").data);
    }
    if (t.A.rows() != t.A.cols() || t.b.size() != t.A.rows())
        throw LoadError("translator in " + archive.string() + " is not a square affine map");
    return t;
}

codec::Codec build_tuned_lens(const runtime::Model &model, const AffineTranslator &translator, int layer,
                              double rel_tolerance) {
    const int d = model.config().d_model;
    require(translator.A.rows() == d && translator.A.cols() == d && translator.b.size() == d,
            "tuned lens translator must be " + std::to_string(d) + "x" + std::to_string(d) + " with bias " +
                std::to_string(d));
    const Matrix U = unembedding(model);
    codec::Dictionary dict;
    dict.directions = U * translator.A.transpose();
    dict.bias_in = U * translator.b;
    dict.labels = token_labels(model);
    const Matrix pinv = codec::pseudoinverse(dict.directions, rel_tolerance);
    Matrix decoder = pinv.transpose();
    dict.bias_out = -(pinv * *dict.bias_in);
    codec::Provenance meta;
    meta.source = "computed";
    meta.model_id = model.config().model_id;
    meta.layer = layer;
    meta.decoder_is_pseudoinverse = true;
    meta.pinv_rel_tolerance = rel_tolerance;
    return codec::Codec(codec::CodecKind::TunedLens, std::move(dict), codec::Activation::identity(), std::move(decoder),
                        std::move(meta));
}

// ---------------------------------------------------------------------------
// SAEs

codec::Codec load_sae(const std::filesystem::path &archive, const std::filesystem::path &metadata) {
    std::ifstream in(metadata);
    if (!in) throw LoadError("cannot open SAE metadata " + metadata.string());
    json meta;
    try {
        in >> meta;
    } catch (const json::exception &e) {
        throw LoadError("malformed SAE metadata " + metadata.string() + ": " + e.what());
    }
    const TensorArchive ar = TensorArchive::load(archive);
    const json names = meta.value("tensors", json::object());
    auto name_of = [&](const char *key) { return names.value(key, std::string(key)); };

    const Matrix w_enc = tensor_matrix(ar.get(name_of("W_enc")), name_of("W_enc"));
    const Matrix w_dec = tensor_matrix(ar.get(name_of("W_dec")), name_of("W_dec"));
    const Eigen::Index d = w_enc.rows(), n = w_enc.cols();
    if (w_dec.rows() != n || w_dec.cols() != d)
        throw LoadError("SAE decoder " + name_of("W_dec") + " is " + std::to_string(w_dec.rows()) + "x" +
                        std::to_string(w_dec.cols()) + ", expected " + std::to_string(n) + "x" + std::to_string(d));
    Vector b_enc = ar.contains(name_of("b_enc")) ? to_vector(ar.get(name_of("b_enc")).data) : Vector::Zero(n);
    Vector b_dec = ar.contains(name_of("b_dec")) ? to_vector(ar.get(name_of("b_dec")).data) : Vector::Zero(d);
    if (b_enc.size() != n) throw LoadError("SAE tensor " + name_of("b_enc") + " has wrong length");
    if (b_dec.size() != d) throw LoadError("SAE tensor " + name_of("b_dec") + " has wrong length");

    // z = act((x - b_dec) W_enc + b_enc) folds into bias_in.
    if (meta.value("apply_b_dec_to_input", false)) b_enc -= w_enc.transpose() * b_dec;

    std::vector<std::string> labels(static_cast<std::size_t>(n));
    json label_src = meta.contains("labels") ? meta["labels"] : json();
    if (label_src.is_null() && meta.contains("labels_path")) {
        std::filesystem::path lp = meta["labels_path"].get<std::string>();
        if (lp.is_relative()) lp = metadata.parent_path() / lp;
        std::ifstream lin(lp);
        if (!lin) throw LoadError("cannot open SAE labels " + lp.string());
        lin >> label_src;
    }
    if (label_src.is_array()) {
        if (static_cast<Eigen::Index>(label_src.size()) != n)
            throw LoadError("SAE has " + std::to_string(n) + " features but " + std::to_string(label_src.size()) +
                            " labels");
        for (std::size_t i = 0; i < label_src.size(); ++i) labels[i] = label_src[i].get<std::string>();
    } else if (label_src.is_object()) {
        for (auto it = label_src.begin(); it != label_src.end(); ++it) {
            const long idx = std::stol(it.key());
            if (idx < 0 || idx >= n)
                throw LoadError("SAE label index " + it.key() + " outside feature count " + std::to_string(n));
            labels[static_cast<std::size_t>(idx)] = it.value().get<std::string>();
        }
    }

    const std::string act_name = meta.value("activation", "relu");
    Vector threshold;
    if (act_name == "jumprelu") threshold = to_vector(ar.get(name_of("threshold")).data);
    codec::Activation activation = codec::Activation::from_name(act_name, meta.value("k", 0), threshold);

    codec::Dictionary dict;
    dict.directions = w_enc.transpose();
    dict.labels = std::move(labels);
    dict.bias_in = std::move(b_enc);
    dict.bias_out = std::move(b_dec);
    codec::Provenance prov;
    prov.source = archive.string();
    prov.model_id = meta.value("model_id", "");
    prov.layer = meta.value("layer", -1);
    prov.allow_zero_rows = meta.value("allow_zero_rows", false);
    const std::string kind = meta.value("kind", "sae");
    return codec::Codec(kind == "supervised_dict" ? codec::CodecKind::SupervisedDict : codec::CodecKind::SAE,
                        std::move(dict), std::move(activation), w_dec, std::move(prov));
}

codec::Codec probe_codec(const ProbeWeights &probe, const std::string &model_id) {
    const double norm2 = probe.w.squaredNorm();
    if (!(norm2 > 0.0)) throw DegenerateInputError("probe weight vector is zero");
    codec::Dictionary dict;
    dict.directions = probe.w.transpose();
    dict.bias_in = Vector::Constant(1, probe.b);
    dict.labels = {probe.topic};
    Matrix decoder = (probe.w / norm2).transpose();
    dict.bias_out = -probe.b * probe.w / norm2;
    codec::Provenance meta;
    meta.source = "trained";
    meta.model_id = model_id;
    meta.layer = probe.layer;
    return codec::Codec(codec::CodecKind::Probe, std::move(dict), codec::Activation::sigmoid(), std::move(decoder),
                        std::move(meta));
}

// ---------------------------------------------------------------------------
// Steering vectors and probes

Vector token_averaged_residual(const runtime::Model &model, int layer, std::string_view text) {
    const auto ids = model.tokenizer().encode(text);
    if (ids.empty()) throw ContractError("cannot featurize empty text");
    runtime::ResidualTap tap;
    tap.layer = layer;
    const auto fwd = runtime::forward_with_tap(model, ids, tap);
    const auto &cap = fwd.capture(layer);
    Vector mean = Vector::Zero(cap.width);
    for (int p = 0; p < cap.rows; ++p) {
        const auto row = cap.row(p);
        for (int i = 0; i < cap.width; ++i) mean[i] += row[static_cast<std::size_t>(i)];
    }
    return mean / static_cast<double>(cap.rows);
}

Vector steering_from_features(const std::vector<Vector> &positive, const std::vector<Vector> &negative) {
    require(!positive.empty(), "steering vector needs at least one pair");
    require(positive.size() == negative.size(), "positive/negative feature lists differ in length");
    Vector sum = Vector::Zero(positive.front().size());
    for (std::size_t i = 0; i < positive.size(); ++i) sum += positive[i] - negative[i];
    return sum / static_cast<double>(positive.size());
}

SteeringVector train_steering_vector(const std::vector<ContrastivePair> &pairs, const runtime::Model &model, int layer,
                                     const std::string &topic) {
    if (pairs.empty()) throw ContractError("train_steering_vector: empty pair list");
    std::vector<Vector> pos, neg;
    pos.reserve(pairs.size());
    neg.reserve(pairs.size());
    for (const auto &p : pairs) {
        pos.push_back(token_averaged_residual(model, layer, p.positive));
        neg.push_back(token_averaged_residual(model, layer, p.negative));
    }
    SteeringVector sv;
    sv.v = steering_from_features(pos, neg);
    sv.layer = layer;
    sv.topic = topic;
    sv.norm = sv.v.norm();
    return sv;
}

double logistic_loss(const Vector &w, double b, const Matrix &X, const std::vector<int> &y, double l2) {
    double loss = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double t = X.row(i).dot(w) + b;
        // log(1 + exp(-s t)) with s = +-1, computed stably
        const double m = y[static_cast<std::size_t>(i)] ? -t : t;
        loss += m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
    }
    return loss / static_cast<double>(X.rows()) + 0.5 * l2 * w.squaredNorm();
}

void logistic_gradient(const Vector &w, double b, const Matrix &X, const std::vector<int> &y, double l2, Vector &grad_w,
                       double &grad_b) {
    grad_w = Vector::Zero(w.size());
    grad_b = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double t = X.row(i).dot(w) + b;
        const double p = t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
        const double r = p - y[static_cast<std::size_t>(i)];
        grad_w += r * X.row(i).transpose();
        grad_b += r;
    }
    grad_w /= static_cast<double>(X.rows());
    grad_b /= static_cast<double>(X.rows());
    grad_w += l2 * w;
}

namespace {

double accuracy(const Vector &w, double b, const Matrix &X, const std::vector<int> &y) {
    if (X.rows() == 0) return 1.0;
    int hits = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const int pred = X.row(i).dot(w) + b > 0.0 ? 1 : 0;
        hits += pred == y[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(hits) / static_cast<double>(X.rows());
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    runtime::Lcg64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

ProbeWeights gradient_descent(const Matrix &Xtr, const std::vector<int> &ytr, const Matrix &Xte,
                              const std::vector<int> &yte, const ProbeHyper &hyper) {
    require(hyper.lr > 0 && hyper.epochs > 0 && hyper.l2 >= 0, "probe hyperparameters out of range");
    ProbeWeights out;
    out.w = Vector::Zero(Xtr.cols());
    Vector gw;
    double gb = 0.0;
    for (int e = 0; e < hyper.epochs; ++e) {
        logistic_gradient(out.w, out.b, Xtr, ytr, hyper.l2, gw, gb);
        out.w -= hyper.lr * gw;
        out.b -= hyper.lr * gb;
    }
    out.final_loss = logistic_loss(out.w, out.b, Xtr, ytr, hyper.l2);
    out.train_acc = accuracy(out.w, out.b, Xtr, ytr);
    out.test_acc = accuracy(out.w, out.b, Xte, yte);
    if (out.train_acc < hyper.accuracy_floor)
        out.warnings.push_back("train accuracy " + std::to_string(out.train_acc) + " below floor " +
                               std::to_string(hyper.accuracy_floor));
    if (!out.w.allFinite()) out.warnings.push_back("probe weights diverged");
    return out;
}

} // namespace

ProbeWeights fit_probe(const Matrix &X, const std::vector<int> &y, const ProbeHyper &hyper) {
    require(static_cast<std::size_t>(X.rows()) == y.size(), "fit_probe: label count mismatch");
    require(X.rows() >= 2, "fit_probe: need at least two samples");
    const auto order = shuffled(static_cast<std::size_t>(X.rows()), hyper.split_seed);
    const auto n_test = static_cast<std::size_t>(std::llround(hyper.test_fraction * static_cast<double>(X.rows())));
    const std::size_t n_train = order.size() - n_test;
    Matrix Xtr(static_cast<Eigen::Index>(n_train), X.cols()), Xte(static_cast<Eigen::Index>(n_test), X.cols());
    std::vector<int> ytr, yte;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(order[k]);
        if (k < n_train) {
            Xtr.row(static_cast<Eigen::Index>(k)) = X.row(i);
            ytr.push_back(y[order[k]]);
        } else {
            Xte.row(static_cast<Eigen::Index>(k - n_train)) = X.row(i);
            yte.push_back(y[order[k]]);
        }
    }
    return gradient_descent(Xtr, ytr, Xte, yte, hyper);
}

ProbeWeights train_probe(const std::vector<ContrastivePair> &pairs, const runtime::Model &model, int layer,
                         const ProbeHyper &hyper, const std::string &topic) {
    require(pairs.size() >= 2, "train_probe: need at least two pairs");
    // split by pair so matched sentences never straddle train and test
    const auto order = shuffled(pairs.size(), hyper.split_seed);
    auto n_test = static_cast<std::size_t>(std::llround(hyper.test_fraction * static_cast<double>(pairs.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, pairs.size() - 1);
    const std::size_t n_train = pairs.size() - n_test;
    const Eigen::Index d = model.config().d_model;
    Matrix Xtr(static_cast<Eigen::Index>(2 * n_train), d), Xte(static_cast<Eigen::Index>(2 * n_test), d);
    std::vector<int> ytr, yte;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto &p = pairs[order[k]];
        const bool train = k < n_train;
        Matrix &X = train ? Xtr : Xte;
        auto &y = train ? ytr : yte;
        const auto row = static_cast<Eigen::Index>(2 * (train ? k : k - n_train));
        X.row(row) = token_averaged_residual(model, layer, p.positive).transpose();
        X.row(row + 1) = token_averaged_residual(model, layer, p.negative).transpose();
        y.push_back(1);
        y.push_back(0);
    }
    ProbeWeights out = gradient_descent(Xtr, ytr, Xte, yte, hyper);
    out.layer = layer;
    out.topic = topic;
    return out;
}

// ---------------------------------------------------------------------------

FeatureSelection select_topic_feature(const codec::Codec &codec, const TopicSpec &topic,
                                      const runtime::Tokenizer &tokenizer, const std::string &model_id) {
    FeatureSelection sel;
    const auto n = codec.feature_count();
    switch (codec.kind()) {
    case codec::CodecKind::LogitLens:
    case codec::CodecKind::TunedLens: {
        require(!topic.lens_tokens.empty(), "topic '" + topic.name + "' lists no lens tokens");
        for (const auto &word : topic.lens_tokens) {
            const auto ids = tokenizer.encode(word);
            if (ids.empty()) throw ContractError("lens token '" + word + "' tokenizes to nothing");
            if (ids.front() >= n)
                throw ContractError("lens token '" + word + "' is not in the codec vocabulary");
            if (ids.size() > 1) {
                sel.degraded = true;
                sel.notes.push_back("'" + word + "' spans " + std::to_string(ids.size()) +
                                    " tokens; using leading token '" + tokenizer.token_bytes(ids.front()) + "'");
            }
            if (std::find(sel.indices.begin(), sel.indices.end(), ids.front()) != sel.indices.end()) continue;
            sel.indices.push_back(ids.front());
            sel.resolved.push_back(tokenizer.token_bytes(ids.front()));
        }
        break;
    }
    case codec::CodecKind::SAE:
    case codec::CodecKind::SupervisedDict: {
        auto it = topic.sae_feature.find(model_id);
        if (it == topic.sae_feature.end())
            throw ContractError("topic '" + topic.name + "' has no dictionary feature for model '" + model_id + "'");
        if (it->second < 0 || it->second >= n)
            throw ContractError("feature id " + std::to_string(it->second) + " out of range for " +
                                std::to_string(n) + " features");
        sel.indices.push_back(static_cast<int>(it->second));
        sel.resolved.push_back(codec.dictionary().labels[static_cast<std::size_t>(it->second)]);
        break;
    }
    case codec::CodecKind::Probe:
        sel.indices.push_back(0);
        sel.resolved.push_back(codec.dictionary().labels.front());
        break;
    }
    return sel;
}

} // namespace steerbench::adapters
