#include "steerbench/intervene.hpp"

#include "steerbench/errors.hpp"

#include <cmath>

namespace steerbench::intervene {

EditedFeatures edit_features(const Vector &z, std::span<const int> targets, double alpha) {
    require(!targets.empty(), "edit_features: no target features");
    require(std::isfinite(alpha) && alpha >= 0.0, "edit_features: alpha must be finite and non-negative");
    for (int t : targets)
        require(t >= 0 && t < z.size(), "edit_features: target " + std::to_string(t) + " out of range");
    EditedFeatures out{z, false};
    double scale = z.size() > 0 ? z.maxCoeff() : 0.0;
    if (!(scale > 0.0)) {
        scale = 1.0;
        out.degenerate = true;
    }
    const double value = alpha * scale;
    for (int t : targets) out.z[t] = value;
    return out;
}

namespace {

EditResult finish(const codec::LatentVector &x, Vector x_hat_prime, bool degenerate) {
    const double norm = x.values.norm();
    if (!(norm > 0.0)) throw DegenerateInputError("edit distance undefined for a zero-norm latent");
    EditResult r;
    r.edit_direction = x_hat_prime - x.values;
    r.edit_distance = r.edit_direction.norm() / norm;
    r.x_hat_prime = {std::move(x_hat_prime), x.layer, x.position};
    r.degenerate = degenerate;
    return r;
}

} // namespace

EditResult counterfactual_latent(const codec::LatentVector &x, const codec::Codec &c, std::span<const int> targets,
                                 double alpha) {
    const Vector z = c.encode(x.values);
    const EditedFeatures edited = edit_features(z, targets, alpha);
    return finish(x, c.decode(edited.z), edited.degenerate);
}

EditResult additive_counterfactual(const codec::LatentVector &x, const Vector &v, double alpha) {
    require(v.size() == x.values.size(), "additive_counterfactual: vector length " + std::to_string(v.size()) +
                                             " != latent length " + std::to_string(x.values.size()));
    require(std::isfinite(alpha), "additive_counterfactual: alpha must be finite");
    return finish(x, x.values + alpha * v, false);
}

void InterventionSpec::validate(int hidden_size) const {
    require(std::isfinite(alpha), "intervention alpha must be finite");
    switch (method) {
    case Method::Codec:
        require(codec != nullptr, "codec intervention without a codec");
        require(!targets.empty(), "codec intervention needs target features");
        require(codec->hidden_size() == hidden_size, "codec hidden size does not match the model");
        break;
    case Method::Additive:
        require(v.size() == hidden_size, "edit vector length does not match the model hidden size");
        break;
    case Method::Control:
        break;
    }
}

InterventionHandle install_intervention(const runtime::Model &model, const InterventionSpec &spec,
                                        std::span<const runtime::ResidualTap> existing) {
    const int d = model.config().d_model;
    spec.validate(d);
    require(spec.layer >= 0 && spec.layer < model.config().n_layers,
            "intervention layer " + std::to_string(spec.layer) + " out of range");
    for (const auto &t : existing)
        require(t.layer != spec.layer, "conflicting taps at layer " + std::to_string(spec.layer));

    auto log = std::make_shared<EditLog>();
    runtime::ResidualTap tap;
    tap.layer = spec.layer;
    tap.mode = runtime::TapMode::Replace;
    tap.positions = runtime::PositionSelector::all();

    if (spec.method == InterventionSpec::Method::Control) {
        tap.edit = [](int, std::span<float>) {};
        return {std::move(tap), std::move(log)};
    }

    // Capture by value: the handle must stay valid after `spec` goes away.
    const auto method = spec.method;
    const auto codec = spec.codec;
    const auto targets = spec.targets;
    const Vector v = spec.v;
    const double alpha = spec.alpha;
    const int layer = spec.layer;
    tap.edit = [=, log = log](int position, std::span<float> residual) {
        codec::LatentVector x{Vector(static_cast<Eigen::Index>(residual.size())), layer, position};
        for (std::size_t i = 0; i < residual.size(); ++i) x.values[static_cast<Eigen::Index>(i)] = residual[i];
        EditResult r = method == InterventionSpec::Method::Codec ? counterfactual_latent(x, *codec, targets, alpha)
                                                                  : additive_counterfactual(x, v, alpha);
        for (std::size_t i = 0; i < residual.size(); ++i)
            residual[i] = static_cast<float>(r.x_hat_prime.values[static_cast<Eigen::Index>(i)]);
        log->by_position[position] = std::move(r);
    };
    return {std::move(tap), std::move(log)};
}

Vector mean_edit_direction(std::span<const Vector> directions) {
    require(!directions.empty(), "mean_edit_direction: no records");
    Vector sum = Vector::Zero(directions.front().size());
    double scale = 0.0;
    for (const auto &d : directions) {
        require(d.size() == sum.size(), "mean_edit_direction: inconsistent direction lengths");
        sum += d;
        scale = std::max(scale, d.norm());
    }
    const Vector mean = sum / static_cast<double>(directions.size());
    const double norm = mean.norm();
    if (!(norm > 1e-12 * scale) || !(norm > 0.0)) throw DegenerateInputError("mean edit direction is zero");
    return mean / norm;
}

Vector mean_edit_direction(std::span<const EditResult> records) {
    std::vector<Vector> dirs;
    dirs.reserve(records.size());
    for (const auto &r : records) dirs.push_back(r.edit_direction);
    return mean_edit_direction(std::span<const Vector>(dirs));
}

} // namespace steerbench::intervene
