#include "sabma/serialize.hpp"
#include "sabma/error.hpp"

#include <filesystem>
#include <fstream>

namespace sabma {

void atomic_write_text(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail_io("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out) fail_io("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) fail_io("cannot rename '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

namespace {

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_io("cannot open '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        fail_config("invalid JSON in '" + path + "': " + e.what());
    }
    return j;
}

Json registry_to_json(const std::vector<ParamRange>& registry) {
    Json out = Json::array();
    for (const ParamRange& r : registry)
        out.push_back({{"name", r.name},
                       {"start", r.start},
                       {"size", r.size},
                       {"rows", r.rows},
                       {"cols", r.cols}});
    return out;
}

std::vector<ParamRange> registry_from_json(const Json& j) {
    if (!j.is_array()) fail_config("registry must be an array");
    std::vector<ParamRange> out;
    for (const Json& e : j) {
        ParamRange r;
        r.name = e.at("name").get<std::string>();
        r.start = e.at("start").get<int>();
        r.size = e.at("size").get<int>();
        r.rows = e.at("rows").get<int>();
        r.cols = e.at("cols").get<int>();
        if (r.size != r.rows * r.cols || r.start < 0 || r.size < 1)
            fail_config("registry entry '" + r.name + "' is inconsistent");
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<double> vec_to_std(const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vector vec_from_json(const Json& j, const char* what) {
    if (!j.is_array()) fail_config(std::string(what) + " must be an array");
    Vector out(static_cast<Eigen::Index>(j.size()));
    Eigen::Index i = 0;
    for (const Json& e : j) {
        if (!e.is_number()) fail_config(std::string(what) + " must contain numbers");
        out(i++) = e.get<double>();
    }
    return out;
}

} // namespace

Json param_vector_to_json(const ParamVector& params) {
    return Json{{"values", params.values}, {"registry", registry_to_json(params.registry)}};
}

ParamVector param_vector_from_json(const Json& j) {
    ParamVector out;
    out.values = j.at("values").get<std::vector<double>>();
    out.registry = registry_from_json(j.at("registry"));
    const int expected = out.registry.empty() ? 0
                                              : out.registry.back().start + out.registry.back().size;
    if (expected != out.size()) fail_config("weights: registry does not match value count");
    return out;
}

void save_param_vector(const ParamVector& params, const std::string& path) {
    atomic_write_text(path, param_vector_to_json(params).dump(2) + "\n");
}

ParamVector load_param_vector(const std::string& path) {
    return param_vector_from_json(read_json_file(path));
}

Json posterior_to_json(const GaussianPosterior& post) {
    Json j;
    j["p1"] = post.p1();
    j["K"] = post.K();
    j["mu"] = vec_to_std(post.mu);
    j["log_sigma"] = vec_to_std(post.log_sigma);
    std::vector<double> L;
    L.reserve(static_cast<size_t>(post.p1()) * static_cast<size_t>(post.K()));
    for (int i = 0; i < post.p1(); ++i)
        for (int k = 0; k < post.K(); ++k) L.push_back(post.lowrank(i, k));
    j["L"] = L;
    j["trainable"] = post.partition.trainable;
    j["frozen"] = post.partition.frozen;
    j["frozen_values"] = vec_to_std(post.frozen_values);
    j["registry"] = registry_to_json(post.registry);
    j["prior_mu"] = vec_to_std(post.prior_mu);
    j["prior_sigma"] = vec_to_std(post.prior_sigma);
    j["train_mu"] = post.train_mu;
    j["train_log_sigma"] = post.train_log_sigma;
    j["train_lowrank"] = post.train_lowrank;
    return j;
}

GaussianPosterior posterior_from_json(const Json& j) {
    GaussianPosterior post;
    const int p1 = j.at("p1").get<int>();
    const int K = j.at("K").get<int>();
    if (p1 < 1 || K < 0) fail_config("posterior checkpoint: bad p1/K");
    post.mu = vec_from_json(j.at("mu"), "mu");
    post.log_sigma = vec_from_json(j.at("log_sigma"), "log_sigma");
    if (post.mu.size() != p1 || post.log_sigma.size() != p1)
        fail_config("posterior checkpoint: mu/log_sigma length != p1");
    const auto L = j.at("L").get<std::vector<double>>();
    if (static_cast<int>(L.size()) != p1 * K)
        fail_config("posterior checkpoint: L length != p1*K");
    post.lowrank.resize(p1, K);
    for (int i = 0; i < p1; ++i)
        for (int k = 0; k < K; ++k)
            post.lowrank(i, k) = L[static_cast<size_t>(i) * static_cast<size_t>(K) +
                                   static_cast<size_t>(k)];
    post.partition.trainable = j.at("trainable").get<std::vector<int>>();
    post.partition.frozen = j.at("frozen").get<std::vector<int>>();
    if (post.partition.p1() != p1) fail_config("posterior checkpoint: trainable length != p1");
    post.frozen_values = vec_from_json(j.at("frozen_values"), "frozen_values");
    post.registry = registry_from_json(j.at("registry"));
    post.prior_mu = vec_from_json(j.at("prior_mu"), "prior_mu");
    post.prior_sigma = vec_from_json(j.at("prior_sigma"), "prior_sigma");
    post.train_mu = j.value("train_mu", true);
    post.train_log_sigma = j.value("train_log_sigma", true);
    post.train_lowrank = j.value("train_lowrank", true);
    post.validate();
    return post;
}

void save_posterior(const GaussianPosterior& post, const std::string& path) {
    atomic_write_text(path, posterior_to_json(post).dump(2) + "\n");
}

GaussianPosterior load_posterior(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_io("cannot open '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        fail_config("invalid JSON in '" + path + "': " + e.what());
    }
    return posterior_from_json(j);
}

} // namespace sabma
