#pragma once

#include "steerbench/codec.hpp"
#include "steerbench/runtime/forward.hpp"

#include <map>
#include <memory>
#include <span>
#include <vector>

namespace steerbench::intervene {

using codec::Vector;

struct EditedFeatures {
    Vector z;
    // max(z) <= 0, so targets were set to alpha * 1.0 instead of alpha * max(z).
    bool degenerate = false;
};

// z'_i = alpha * max(z) for every target i; other entries unchanged.
EditedFeatures edit_features(const Vector &z, std::span<const int> targets, double alpha);

struct EditResult {
    codec::LatentVector x_hat_prime;
    double edit_distance = 0.0; // ||x_hat' - x|| / ||x||
    Vector edit_direction;      // x_hat' - x
    bool degenerate = false;
};

// x_hat' = decode(edit_features(encode(x))). Includes the codec's own
// reconstruction error as well as the edit.
EditResult counterfactual_latent(const codec::LatentVector &x, const codec::Codec &c, std::span<const int> targets,
                                 double alpha);

// x_hat' = x + alpha * v.
EditResult additive_counterfactual(const codec::LatentVector &x, const Vector &v, double alpha);

struct InterventionSpec {
    enum class Method {
        Codec,    // feature edit through a codec
        Additive, // steering vector or probe weights
        Control,  // identity hook: installs a replace tap that changes nothing
    };
    Method method = Method::Codec;
    std::shared_ptr<const codec::Codec> codec;
    std::vector<int> targets;
    Vector v;
    int layer = 0;
    double alpha = 0.0;
    runtime::GenerationSettings generation;

    void validate(int hidden_size) const;
};

// Per-position edit results recorded by an installed hook (last write wins).
struct EditLog {
    std::map<int, EditResult> by_position;
};

struct InterventionHandle {
    runtime::ResidualTap tap;
    std::shared_ptr<EditLog> log;
};

// Builds a replace tap at spec.layer that edits the residual at every token
// position on every forward pass. Throws ContractError when `existing`
// already holds a tap at that layer.
InterventionHandle install_intervention(const runtime::Model &model, const InterventionSpec &spec,
                                        std::span<const runtime::ResidualTap> existing = {});

// Normalized mean of edit directions. Throws DegenerateInputError when the
// mean vanishes.
Vector mean_edit_direction(std::span<const EditResult> records);
Vector mean_edit_direction(std::span<const Vector> directions);

} // namespace steerbench::intervene
