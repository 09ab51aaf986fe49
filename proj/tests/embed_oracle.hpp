#pragma once

// Central-difference check of the ranking-loss gradient.

#include <algorithm>
#include <cmath>
#include <vector>

#include "drugrec/embed.hpp"
#include "drugrec/rng.hpp"

namespace drugrec::oracle {

inline std::vector<double> random_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(-3.0, 3.0);
    }
    return v;
}

// Central differences over every parameter of the model.
inline double max_gradient_error(TranslationalModel model, const std::vector<RankingSample>& samples, double margin) {
    TranslationalModel grad;
    ranking_loss(model, samples, margin, &grad);
    const double h = 1e-5;
    double worst = 0.0;
    const auto check_block = [&](std::vector<double>& params, const std::vector<double>& analytic) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + h;
            const double up = ranking_loss(model, samples, margin);
            params[i] = saved - h;
            const double down = ranking_loss(model, samples, margin);
            params[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
            worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
        }
    };
    check_block(model.entities, grad.entities);
    check_block(model.relations, grad.relations);
    return worst;
}

} // namespace drugrec::oracle
