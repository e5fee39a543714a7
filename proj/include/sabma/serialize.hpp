#pragma once

#include "sabma/posterior.hpp"

#include "json.hpp"

#include <string>

namespace sabma {

using Json = nlohmann::json;

// Durable write: temp file in the same directory, then rename over the target.
void atomic_write_text(const std::string& path, const std::string& content);

Json param_vector_to_json(const ParamVector& params);
ParamVector param_vector_from_json(const Json& j);
void save_param_vector(const ParamVector& params, const std::string& path);
ParamVector load_param_vector(const std::string& path);

// Posterior checkpoint: p1, K, mu, log_sigma, L (row-major), partition indices,
// frozen values, the registry, and the recorded prior.
Json posterior_to_json(const GaussianPosterior& post);
GaussianPosterior posterior_from_json(const Json& j);
void save_posterior(const GaussianPosterior& post, const std::string& path);
GaussianPosterior load_posterior(const std::string& path);

} // namespace sabma
