// SPDX-License-Identifier: Apache-2.0
#include "trim/config.hpp"

#include "trim/error.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace trim {

namespace {

using nlohmann::json;

json algorithmic(const PipelineConfig& c) {
    json j;
    j["saliency"] = {
        {"layers", c.saliency.layers},
        {"w_q", c.saliency.w_q},
        {"w_k", c.saliency.w_k},
        {"epsilon", c.saliency.epsilon},
    };
    j["scoring"] = {
        {"lambda", c.scoring.lambda},
        {"w_mu", c.scoring.w_mu},
        {"w_m", c.scoring.w_m},
        {"eta", c.scoring.eta},
        {"scope", std::string(to_string(c.scoring.scope))},
        {"oov", std::string(to_string(c.scoring.oov))},
    };
    return j;
}

json budget_json(const Budget& b) {
    if (b.kind == Budget::Kind::TopK) return {{"kind", "top_k"}, {"value", b.count}};
    return {{"kind", "top_p"}, {"value", b.fraction}};
}

template <typename T>
void take(const json& obj, const char* key, T& dst) {
    if (const auto it = obj.find(key); it != obj.end()) dst = it->get<T>();
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (auto k : known) ok = ok || key == k;
        if (!ok) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + where + key + "'");
    }
}

} // namespace

void PipelineConfig::validate() const {
    saliency.validate();
    scoring.validate();
    budget.validate();
    if (workers < 1) throw Error(ErrorCode::InvalidConfig, "workers must be >= 1");
}

std::string PipelineConfig::to_json() const {
    json j = algorithmic(*this);
    j["budget"] = budget_json(budget);
    j["workers"] = workers;
    j["strict"] = strict;
    return j.dump();
}

std::string PipelineConfig::canonical_json() const { return algorithmic(*this).dump(); }

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string PipelineConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json())));
    return buf;
}

void PipelineConfig::overlay_json(const std::string& json_text) {
    try {
        const json j = json::parse(json_text);
        if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
        reject_unknown(j, {"saliency", "scoring", "budget", "workers", "strict"}, "");
        if (const auto it = j.find("saliency"); it != j.end()) {
            reject_unknown(*it, {"layers", "w_q", "w_k", "epsilon"}, "saliency.");
            take(*it, "layers", saliency.layers);
            take(*it, "w_q", saliency.w_q);
            take(*it, "w_k", saliency.w_k);
            take(*it, "epsilon", saliency.epsilon);
        }
        if (const auto it = j.find("scoring"); it != j.end()) {
            reject_unknown(*it, {"lambda", "w_mu", "w_m", "eta", "scope", "oov"}, "scoring.");
            take(*it, "lambda", scoring.lambda);
            take(*it, "w_mu", scoring.w_mu);
            take(*it, "w_m", scoring.w_m);
            take(*it, "eta", scoring.eta);
            if (it->contains("scope")) scoring.scope = parse_scope(it->at("scope").get<std::string>());
            if (it->contains("oov")) scoring.oov = parse_oov_policy(it->at("oov").get<std::string>());
        }
        if (const auto it = j.find("budget"); it != j.end()) {
            reject_unknown(*it, {"kind", "value"}, "budget.");
            const std::string kind = it->at("kind").get<std::string>();
            if (kind == "top_k") {
                budget = Budget::top_k(it->at("value").get<std::uint64_t>());
            } else if (kind == "top_p") {
                budget = Budget::top_p(it->at("value").get<double>());
            } else {
                throw Error(ErrorCode::InvalidConfig, "budget.kind must be top_k or top_p");
            }
        }
        take(j, "workers", workers);
        take(j, "strict", strict);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("malformed config: ") + e.what());
    }
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    PipelineConfig cfg;
    cfg.overlay_json(ss.str());
    return cfg;
}

} // namespace trim
