#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relpos/gradcheck.hpp"
#include "relpos/posembed.hpp"

namespace relpos {

/// Gradient tolerance used by the self-check suites (f64, h = 1e-5).
constexpr double kGradTolerance = 1e-6;

/// Analytic vs central-difference gradients of one method's logit op with
/// respect to q, k and every position parameter it uses. Random tiny inputs,
/// clipped table so shared entries are exercised.
std::vector<GradCheckResult> logit_gradcheck(MethodKind kind, std::uint64_t seed);

/// Same comparison for the full encoder cross-entropy loss on a tiny model
/// with perturbed (non-identity) position parameters and one masked key.
std::vector<GradCheckResult> encoder_gradcheck(MethodKind kind, std::uint64_t seed);

/// Largest |logits_m4 - logits_m4_alt| over `instances` random draws with
/// L <= 8 and d_z <= 8.
double m4_forms_max_diff(std::size_t instances, std::uint64_t seed);

struct IdentityInitCheck {
    MethodKind kind;
    double max_abs_diff = 0.0;
};

/// For every method with attention-side parameters, freshly initialised
/// logits minus plain q.k logits on random q, k.
std::vector<IdentityInitCheck> identity_init_checks(std::uint64_t seed);

/// Worst error per group, where the group is the parameter name with layer
/// and head indices removed (e.g. "w_q", "rel", "ff_w1").
std::vector<GradCheckResult> group_results(const std::vector<GradCheckResult>& results);

}  // namespace relpos
