#include <doctest.h>

#include "steerbench/adapters.hpp"
#include "steerbench/errors.hpp"
#include "steerbench/runtime/forward.hpp"
#include "test_support.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

using namespace steerbench;
using namespace steerbench::adapters;
using test_support::random_matrix;
using test_support::random_vector;
using json = nlohmann::json;

namespace {

Tensor to_tensor(const Matrix &m) {
    Tensor t{{m.rows(), m.cols()}, {}};
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
    return t;
}

Tensor to_tensor(const Vector &v) {
    Tensor t{{v.size()}, {}};
    for (Eigen::Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<float>(v[i]));
    return t;
}

// Rounded through float32 so expectations match what the archive stores.
Matrix f32(const Matrix &m) { return m.cast<float>().cast<double>(); }

std::vector<int> bytes_of(const std::string &s) {
    std::vector<int> out;
    for (unsigned char c : s) out.push_back(c);
    return out;
}

} // namespace

TEST_CASE("logit lens with the final norm reproduces the model prediction at the last layer") {
    const auto &m = test_support::tiny_model();
    const int last = m.config().n_layers - 1;
    const auto lens = build_logit_lens(m, last).with_input_norm(final_norm(m));
    const auto tokens = bytes_of("The lens at the top is the model.");
    runtime::ResidualTap tap{last, runtime::TapMode::Read, {}, {}};
    const auto fwd = runtime::forward_with_tap(m, tokens, tap);
    for (int p = 0; p < fwd.seq_len; ++p) {
        const Vector z = lens.encode(test_support::to_vector(fwd.capture(last).row(p)));
        const auto row = fwd.logits_row(p);
        int arg = 0;
        z.maxCoeff(&arg);
        CHECK(arg == runtime::argmax(row));
        for (int i = 0; i < 256; i += 17) CHECK(z[i] == doctest::Approx(row[static_cast<std::size_t>(i)]).epsilon(1e-4));
    }
}

TEST_CASE("logit lens metadata and round trip") {
    const auto &m = test_support::tiny_model();
    const auto lens = build_logit_lens(m, 2);
    CHECK(lens.kind() == codec::CodecKind::LogitLens);
    CHECK(lens.feature_count() == 256);
    CHECK(lens.hidden_size() == 64);
    CHECK(lens.dictionary().labels[65] == "A");
    CHECK(lens.meta().decoder_is_pseudoinverse);
    // U is 256 x 64 with full column rank, so the lens is lossless
    const Vector x = random_vector(64, 3);
    CHECK(codec::reconstruction_error(x, lens) < 1e-8);
}

TEST_CASE("tuned lens with an identity translator equals the logit lens") {
    const auto &m = test_support::tiny_model();
    const AffineTranslator id{Matrix::Identity(64, 64), Vector::Zero(64)};
    const auto tuned = build_tuned_lens(m, id, 1);
    const auto logit = build_logit_lens(m, 1);
    CHECK(tuned.kind() == codec::CodecKind::TunedLens);
    const Vector x = random_vector(64, 4);
    CHECK((tuned.encode(x) - logit.encode(x)).norm() <= 1e-10 * logit.encode(x).norm());
    CHECK((tuned.decode(tuned.encode(x)) - x).norm() <= 1e-8 * x.norm());
    CHECK_THROWS_AS(build_tuned_lens(m, AffineTranslator{Matrix::Identity(3, 3), Vector::Zero(3)}, 1), ContractError);
}

TEST_CASE("tuned lens applies the affine translator then the unembedding") {
    const auto &m = test_support::tiny_model();
    const auto dir = test_support::scratch_dir("translator");
    const Matrix W = f32(random_matrix(64, 64, 5, 0.05));
    const Vector bias = f32(random_vector(64, 6, 0.1));
    TensorArchive ar;
    ar.put("layer1.weight", to_tensor(W));
    ar.put("layer1.bias", to_tensor(bias));
    ar.save(dir / "t.safetensors");
    const auto t = load_translator(dir / "t.safetensors", "layer1.");
    CHECK((t.A - (Matrix::Identity(64, 64) + W.transpose())).norm() < 1e-12);
    const auto tuned = build_tuned_lens(m, t, 1);
    const auto logit = build_logit_lens(m, 1);
    const Vector x = random_vector(64, 7);
    const Vector h = x + W * x + bias; // residual translator, column form
    CHECK((tuned.encode(x) - logit.encode(h)).norm() <= 1e-8 * logit.encode(h).norm());
    CHECK((tuned.decode(tuned.encode(x)) - x).norm() <= 1e-8 * x.norm());
    CHECK_THROWS_AS(load_translator(dir / "t.safetensors", "missing."), LoadError);
}

TEST_CASE("SAE checkpoint loads with labels and the b_dec input fold") {
    const auto dir = test_support::scratch_dir("sae");
    const Eigen::Index d = 6, n = 10;
    const Matrix w_enc = f32(random_matrix(d, n, 8)), w_dec = f32(random_matrix(n, d, 9));
    const Vector b_enc = f32(random_vector(n, 10)), b_dec = f32(random_vector(d, 11));
    TensorArchive ar;
    ar.put("enc", to_tensor(w_enc));
    ar.put("dec", to_tensor(w_dec));
    ar.put("b_enc", to_tensor(b_enc));
    ar.put("b_dec", to_tensor(b_dec));
    ar.save(dir / "sae.safetensors");
    json meta = {{"kind", "sae"},
                 {"model_id", "toy"},
                 {"layer", 3},
                 {"activation", "relu"},
                 {"labels", {{"4", "coffee"}, {"7", "dogs"}}},
                 {"tensors", {{"W_enc", "enc"}, {"W_dec", "dec"}}},
                 {"apply_b_dec_to_input", true}};
    std::ofstream(dir / "sae.json") << meta.dump();
    const auto sae = load_sae(dir / "sae.safetensors", dir / "sae.json");
    CHECK(sae.kind() == codec::CodecKind::SAE);
    CHECK(sae.id() == "sae:toy:L3");
    CHECK(sae.dictionary().labels[4] == "coffee");
    CHECK(sae.dictionary().labels[0].empty());
    CHECK_FALSE(sae.meta().decoder_is_pseudoinverse);
    const Vector x = random_vector(d, 12);
    const Vector expected_z = ((x - b_dec).transpose() * w_enc + b_enc.transpose()).transpose().cwiseMax(0.0);
    CHECK((sae.encode(x) - expected_z).norm() < 1e-10);
    CHECK((sae.decode(expected_z) - (w_dec.transpose() * expected_z + b_dec)).norm() < 1e-10);

    TopicSpec topic;
    topic.name = "coffee";
    topic.sae_feature["toy"] = 4;
    const auto sel = select_topic_feature(sae, topic, runtime::Tokenizer::bytes(), "toy");
    CHECK(sel.indices == std::vector<int>{4});
    CHECK(sel.resolved == std::vector<std::string>{"coffee"});
    CHECK_THROWS_AS(select_topic_feature(sae, topic, runtime::Tokenizer::bytes(), "other"), ContractError);
    topic.sae_feature["toy"] = 10;
    CHECK_THROWS_AS(select_topic_feature(sae, topic, runtime::Tokenizer::bytes(), "toy"), ContractError);

    meta["tensors"]["W_dec"] = "enc"; // wrong shape
    std::ofstream(dir / "bad.json") << meta.dump();
    CHECK_THROWS_AS(load_sae(dir / "sae.safetensors", dir / "bad.json"), LoadError);
    CHECK_THROWS_AS(load_sae(dir / "sae.safetensors", dir / "absent.json"), LoadError);
}

TEST_CASE("lens feature selection resolves leading tokens") {
    const auto lens = build_logit_lens(test_support::tiny_model(), 2);
    TopicSpec topic;
    topic.name = "coffee";
    topic.lens_tokens = {"c", "coffee"};
    const auto sel = select_topic_feature(lens, topic, runtime::Tokenizer::bytes(), "tiny");
    CHECK(sel.indices == std::vector<int>{'c'}); // deduplicated
    CHECK(sel.degraded);
    topic.lens_tokens.clear();
    CHECK_THROWS_AS(select_topic_feature(lens, topic, runtime::Tokenizer::bytes(), "tiny"), ContractError);
}

TEST_CASE("steering vectors: antisymmetry and linearity") {
    std::vector<Vector> pos, neg;
    for (std::uint64_t i = 0; i < 5; ++i) {
        pos.push_back(random_vector(8, 100 + i));
        neg.push_back(random_vector(8, 200 + i));
    }
    const Vector v = steering_from_features(pos, neg);
    CHECK(steering_from_features(neg, pos) == -v);
    Vector naive = Vector::Zero(8);
    for (int i = 0; i < 5; ++i) naive += (pos[i] - neg[i]) / 5.0;
    CHECK((v - naive).norm() < 1e-12);
    // scaling every feature scales the vector
    std::vector<Vector> pos3, neg3;
    for (int i = 0; i < 5; ++i) {
        pos3.push_back(3.0 * pos[i]);
        neg3.push_back(3.0 * neg[i]);
    }
    CHECK((steering_from_features(pos3, neg3) - 3.0 * v).norm() < 1e-12);
    CHECK_THROWS_AS(steering_from_features({}, {}), ContractError);
    CHECK_THROWS_AS(steering_from_features(pos, {neg[0]}), ContractError);
}

TEST_CASE("steering vector from the tiny model equals the feature-level formula") {
    const auto &m = test_support::tiny_model();
    const std::vector<ContrastivePair> pairs{{"I love coffee", "I love tea"}, {"coffee beans", "green beans"}};
    const auto sv = train_steering_vector(pairs, m, 2, "coffee");
    Vector expected = Vector::Zero(64);
    for (const auto &p : pairs)
        expected += (token_averaged_residual(m, 2, p.positive) - token_averaged_residual(m, 2, p.negative)) / 2.0;
    CHECK((sv.v - expected).norm() < 1e-12);
    CHECK(sv.norm == doctest::Approx(sv.v.norm()));
    const std::vector<ContrastivePair> swapped{{"I love tea", "I love coffee"}, {"green beans", "coffee beans"}};
    CHECK(train_steering_vector(swapped, m, 2).v == -sv.v);
}

TEST_CASE("logistic gradient agrees with central finite differences") {
    const Matrix X = random_matrix(20, 5, 13);
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) y.push_back(i % 3 == 0 ? 1 : 0);
    const Vector w = random_vector(5, 14);
    const double b = 0.3, l2 = 0.01, h = 1e-6;
    Vector gw;
    double gb = 0.0;
    logistic_gradient(w, b, X, y, l2, gw, gb);
    for (int j = 0; j < 5; ++j) {
        Vector wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        const double fd = (logistic_loss(wp, b, X, y, l2) - logistic_loss(wm, b, X, y, l2)) / (2 * h);
        CHECK(std::abs(fd - gw[j]) < 1e-4);
    }
    const double fdb = (logistic_loss(w, b + h, X, y, l2) - logistic_loss(w, b - h, X, y, l2)) / (2 * h);
    CHECK(std::abs(fdb - gb) < 1e-4);
    // extreme margins stay finite
    CHECK(std::isfinite(logistic_loss(w * 1e6, b, X, y, l2)));
}

TEST_CASE("probe reaches full accuracy on separable data") {
    Matrix X(200, 4);
    std::vector<int> y;
    const Matrix noise = random_matrix(200, 4, 15, 0.3);
    for (int i = 0; i < 200; ++i) {
        const int label = i % 2;
        X.row(i) = noise.row(i);
        X(i, 0) += label ? 2.0 : -2.0;
        y.push_back(label);
    }
    const auto p = fit_probe(X, y, ProbeHyper{});
    CHECK(p.train_acc == 1.0);
    CHECK(p.test_acc == 1.0);
    CHECK(p.warnings.empty());
    CHECK(p.w[0] > 0.0);
    ProbeHyper bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(fit_probe(X, y, bad), ContractError);
    CHECK_THROWS_AS(fit_probe(X, {1, 0}, ProbeHyper{}), ContractError);
}

TEST_CASE("probe below the accuracy floor warns instead of failing") {
    Matrix X = random_matrix(40, 3, 16);
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) y.push_back((i * 7) % 2);
    ProbeHyper h;
    h.epochs = 50;
    const auto p = fit_probe(X, y, h);
    CHECK(p.train_acc < 1.0);
    CHECK_FALSE(p.warnings.empty());
}

TEST_CASE("probe codec is a sigmoid readout") {
    ProbeWeights p;
    p.w = random_vector(5, 17);
    p.b = -0.2;
    p.topic = "coffee";
    p.layer = 1;
    const auto c = probe_codec(p, "tiny");
    const Vector x = random_vector(5, 18);
    CHECK(c.encode(x)[0] == doctest::Approx(1.0 / (1.0 + std::exp(-(p.w.dot(x) + p.b)))));
    // decoding the pre-activation logit recovers the component of x along w
    Vector logit(1);
    logit << p.w.dot(x) + p.b;
    CHECK(c.decode(logit).dot(p.w) == doctest::Approx(p.w.dot(x)));
    p.w.setZero();
    CHECK_THROWS_AS(probe_codec(p, "tiny"), DegenerateInputError);
}

TEST_CASE("topic and pair files") {
    const auto topic = load_topic(test_support::source_path("data/topics/coffee.json"));
    CHECK(topic.name == "coffee");
    CHECK(topic.detector.kind == TopicDetector::Kind::Keyword);
    CHECK_FALSE(topic.lens_tokens.empty());
    CHECK(topic.sae_feature.count("gpt2") == 1);
    const auto pairs = load_pairs(topic.pairs_path);
    CHECK(pairs.size() == 200);
    const auto french = load_topic(test_support::source_path("data/topics/french.json"));
    CHECK(french.detector.kind == TopicDetector::Kind::Language);
    CHECK(french.detector.language == "fr");

    const auto dir = test_support::scratch_dir("pairs");
    std::ofstream(dir / "bad.jsonl") << "{\"positive\": \"a\"}\n";
    CHECK_THROWS_AS(load_pairs(dir / "bad.jsonl"), LoadError);
    CHECK_THROWS_AS(load_pairs(dir / "absent.jsonl"), LoadError);
    CHECK_THROWS_AS(parse_topic("{\"name\": \"x\"}"), LoadError);
    CHECK_THROWS_AS(load_topic(dir / "absent.json"), LoadError);
}
