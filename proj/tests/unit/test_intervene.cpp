#include <doctest.h>

#include "steerbench/adapters.hpp"
#include "steerbench/errors.hpp"
#include "steerbench/intervene.hpp"
#include "test_support.hpp"

using namespace steerbench;
using namespace steerbench::intervene;
using codec::Codec;
using codec::LatentVector;
using codec::Matrix;
using test_support::random_matrix;
using test_support::random_vector;

namespace {

Codec identity_codec(const Matrix &D, const Matrix &decoder) {
    std::vector<std::string> labels;
    for (Eigen::Index i = 0; i < D.rows(); ++i) labels.push_back("f" + std::to_string(i));
    return Codec(codec::CodecKind::SupervisedDict, {D, labels, {}, {}}, codec::Activation::identity(), decoder,
                 {"computed", "toy", 0, false, 0.0, false});
}

std::vector<int> bytes_of(const std::string &s) {
    std::vector<int> out;
    for (unsigned char c : s) out.push_back(c);
    return out;
}

} // namespace

TEST_CASE("feature edit sets targets to alpha times the maximum") {
    Vector z(4);
    z << 0.1, 0.5, 0.2, -0.3;
    const std::vector<int> t{0};
    const auto e = edit_features(z, t, 2.0);
    CHECK(e.z[0] == 1.0);
    CHECK(e.z[1] == 0.5);
    CHECK(e.z[3] == -0.3);
    CHECK_FALSE(e.degenerate);
    const std::vector<int> two{2, 3};
    const auto e2 = edit_features(z, two, 0.0);
    CHECK(e2.z[2] == 0.0);
    CHECK(e2.z[3] == 0.0);
    CHECK_THROWS_AS(edit_features(z, std::vector<int>{}, 1.0), ContractError);
    CHECK_THROWS_AS(edit_features(z, t, -1.0), ContractError);
    CHECK_THROWS_AS(edit_features(z, t, INFINITY), ContractError);
    CHECK_THROWS_AS(edit_features(z, std::vector<int>{4}, 1.0), ContractError);
}

TEST_CASE("non-positive maximum falls back to alpha and flags the edit") {
    Vector z(3);
    z << -1.0, -2.0, 0.0;
    const std::vector<int> t{1};
    const auto e = edit_features(z, t, 3.0);
    CHECK(e.degenerate);
    CHECK(e.z[1] == 3.0);
    // through an identity codec the latent moves by (3 - z_1) along decoder row 1
    const Matrix D = Matrix::Identity(3, 3);
    const Codec c = identity_codec(D, D);
    const LatentVector x{-z, 0, 0};
    Vector neg(3);
    neg << -1.0, -2.0, -0.5;
    const LatentVector xn{neg, 0, 0};
    const auto r = counterfactual_latent(xn, c, t, 3.0);
    CHECK(r.degenerate);
    Vector expected = neg;
    expected[1] = 3.0;
    CHECK((r.x_hat_prime.values - expected).norm() < 1e-12);
    CHECK((r.edit_direction - 5.0 * Vector::Unit(3, 1)).norm() < 1e-12);
    CHECK_FALSE(counterfactual_latent(x, c, t, 3.0).degenerate);
}

TEST_CASE("edited latent is affine in alpha for identity-activation codecs") {
    const Matrix D = random_matrix(12, 6, 1);
    const Matrix dec = codec::pseudoinverse(D).transpose();
    const Codec c = identity_codec(D, dec);
    const LatentVector x{random_vector(6, 2), 1, 0};
    const std::vector<int> t{3, 7};
    const double zmax = c.encode(x.values).maxCoeff();
    REQUIRE(zmax > 0.0);
    const Vector slope = zmax * (dec.row(3) + dec.row(7)).transpose();
    const std::vector<double> alphas{0.0, 1.0, 5.0, 50.0};
    for (std::size_t i = 0; i + 1 < alphas.size(); ++i) {
        const auto a = counterfactual_latent(x, c, t, alphas[i]);
        const auto b = counterfactual_latent(x, c, t, alphas[i + 1]);
        const Vector chord = (b.x_hat_prime.values - a.x_hat_prime.values) / (alphas[i + 1] - alphas[i]);
        CHECK((chord - slope).norm() <= 1e-8 * slope.norm());
    }
}

TEST_CASE("additive edit distance is |alpha| ||v|| / ||x||") {
    const LatentVector x{random_vector(10, 3), 2, 5};
    const Vector v = random_vector(10, 4);
    for (double a : {0.0, 0.5, -2.0, 8.0}) {
        const auto r = additive_counterfactual(x, v, a);
        CHECK(r.edit_distance == doctest::Approx(std::abs(a) * v.norm() / x.values.norm()).epsilon(1e-12));
        CHECK(r.x_hat_prime.layer == 2);
        CHECK(r.x_hat_prime.position == 5);
    }
    CHECK(additive_counterfactual(x, v, 0.0).edit_distance == 0.0);
    CHECK_THROWS_AS(additive_counterfactual(x, random_vector(9, 1), 1.0), ContractError);
    CHECK_THROWS_AS(additive_counterfactual({Vector::Zero(10), 0, 0}, v, 1.0), DegenerateInputError);
}

TEST_CASE("logit lens edits grow the target and eventually make it dominant") {
    // decode(z') is a least-squares solve, so re-encoding projects z' onto the
    // column space of U; the target still grows monotonically with alpha
    const auto &m = test_support::tiny_model();
    const auto lens = adapters::build_logit_lens(m, 2);
    const LatentVector x{random_vector(64, 5), 2, 0};
    const std::vector<int> t{'q'};
    double prev_distance = -1.0, prev_target = -1e300;
    int arg = -1;
    for (double a : {1.5, 3.0, 10.0, 40.0, 400.0}) {
        const auto r = counterfactual_latent(x, lens, t, a);
        const Vector z2 = lens.encode(r.x_hat_prime.values);
        CHECK(r.edit_distance > prev_distance);
        CHECK(z2['q'] > prev_target);
        prev_distance = r.edit_distance;
        prev_target = z2['q'];
        z2.maxCoeff(&arg);
    }
    CHECK(arg == 'q');
}

TEST_CASE("editing a target already at the maximum with alpha one is neutral") {
    const Matrix D = random_matrix(8, 8, 6);
    const Codec c = identity_codec(D, codec::pseudoinverse(D).transpose());
    const LatentVector x{random_vector(8, 7), 0, 0};
    int arg = 0;
    c.encode(x.values).maxCoeff(&arg);
    const std::vector<int> t{arg};
    CHECK(counterfactual_latent(x, c, t, 1.0).edit_distance < 1e-10);
}

TEST_CASE("alpha zero additive and control interventions leave generation unchanged") {
    const auto &m = test_support::tiny_model();
    const auto prompt = bytes_of("Tell me about the sea");
    const auto settings = runtime::GenerationSettings::greedy(20);
    const auto clean = runtime::generate(m, prompt, settings);

    InterventionSpec add;
    add.method = InterventionSpec::Method::Additive;
    add.v = random_vector(64, 8);
    add.layer = 1;
    add.alpha = 0.0;
    const auto h = install_intervention(m, add);
    const auto edited = runtime::generate(m, prompt, settings, std::vector<runtime::ResidualTap>{h.tap});
    CHECK(edited.tokens == clean.tokens);
    CHECK(edited.step_logits == clean.step_logits);
    REQUIRE(h.log->by_position.count(static_cast<int>(prompt.size()) - 1) == 1);
    CHECK(h.log->by_position.at(static_cast<int>(prompt.size()) - 1).edit_distance == 0.0);

    InterventionSpec ctl;
    ctl.method = InterventionSpec::Method::Control;
    ctl.layer = 2;
    const auto hc = install_intervention(m, ctl);
    CHECK(runtime::generate(m, prompt, settings, std::vector<runtime::ResidualTap>{hc.tap}).tokens == clean.tokens);
    CHECK(hc.log->by_position.empty());
}

TEST_CASE("codec interventions log every position and change the output") {
    const auto &m = test_support::tiny_model();
    InterventionSpec s;
    s.method = InterventionSpec::Method::Codec;
    s.codec = std::make_shared<const Codec>(adapters::build_logit_lens(m, 3));
    s.targets = {'z'};
    s.layer = 3;
    s.alpha = 50.0;
    const auto h = install_intervention(m, s);
    const auto prompt = bytes_of("abc");
    const auto g = runtime::generate(m, prompt, runtime::GenerationSettings::greedy(5), std::vector<runtime::ResidualTap>{h.tap});
    CHECK(h.log->by_position.size() == prompt.size() + 4);
    CHECK(g.tokens.front() == 'z');
    CHECK(h.log->by_position.at(0).edit_distance > 0.0);
}

TEST_CASE("intervention contracts") {
    const auto &m = test_support::tiny_model();
    InterventionSpec s;
    s.method = InterventionSpec::Method::Additive;
    s.v = random_vector(64, 9);
    s.layer = 1;
    s.alpha = 1.0;
    const auto h = install_intervention(m, s);
    const std::vector<runtime::ResidualTap> existing{h.tap};
    CHECK_THROWS_AS(install_intervention(m, s, existing), ContractError);
    s.layer = 2;
    CHECK_NOTHROW(install_intervention(m, s, existing));
    s.layer = 4;
    CHECK_THROWS_AS(install_intervention(m, s), ContractError);
    s.layer = 1;
    s.v = random_vector(63, 9);
    CHECK_THROWS_AS(install_intervention(m, s), ContractError);
    s.method = InterventionSpec::Method::Codec;
    CHECK_THROWS_AS(install_intervention(m, s), ContractError);
    s.codec = std::make_shared<const Codec>(adapters::build_logit_lens(m, 1));
    CHECK_THROWS_AS(install_intervention(m, s), ContractError); // no targets
    s.targets = {1};
    s.alpha = NAN;
    CHECK_THROWS_AS(install_intervention(m, s), ContractError);
}

TEST_CASE("mean edit direction") {
    std::vector<Vector> dirs{Vector::Unit(2, 0), Vector::Unit(2, 1)};
    const Vector m = mean_edit_direction(std::span<const Vector>(dirs));
    CHECK(m[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(m[1] == doctest::Approx(1.0 / std::sqrt(2.0)));
    std::vector<Vector> opposite{Vector::Unit(3, 0), -Vector::Unit(3, 0)};
    CHECK_THROWS_AS(mean_edit_direction(std::span<const Vector>(opposite)), DegenerateInputError);
    CHECK_THROWS_AS(mean_edit_direction(std::span<const Vector>()), ContractError);
    std::vector<EditResult> recs(2);
    recs[0].edit_direction = 2.0 * Vector::Unit(2, 0);
    recs[1].edit_direction = 4.0 * Vector::Unit(2, 0);
    CHECK(mean_edit_direction(std::span<const EditResult>(recs)) == Vector::Unit(2, 0));
}
