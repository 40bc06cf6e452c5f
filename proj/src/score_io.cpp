// SPDX-License-Identifier: Apache-2.0
#include "trim/score_io.hpp"

#include "binary_io.hpp"
#include "trim/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace trim {

const std::string& sample_id_of(const ScoreResult& result) noexcept {
    return std::visit([](const auto& r) -> const std::string& { return r.sample_id; }, result);
}

std::string format_score_line(const ScoreResult& result, std::string_view config_hash) {
    nlohmann::ordered_json j;
    if (const auto* err = std::get_if<RecordError>(&result)) {
        j["sample_id"] = err->sample_id;
        j["error"] = std::string(to_string(err->code));
        j["message"] = err->message;
    } else {
        const auto& r = std::get<ScoreRecord>(result);
        j["sample_id"] = r.sample_id;
        if (r.empty_scope()) {
            j["S"] = nullptr;
            j["mu"] = nullptr;
            j["m"] = nullptr;
            j["kappa"] = nullptr;
        } else {
            j["S"] = r.score;
            j["mu"] = r.mean;
            j["m"] = r.max;
            j["kappa"] = r.coverage;
        }
        j["scored_tokens"] = r.scored_tokens;
        j["total_tokens"] = r.total_tokens;
        j["oov_tokens"] = r.oov_tokens;
        j["source"] = r.source;
        j["empty_scope"] = r.empty_scope();
    }
    j["config_hash"] = std::string(config_hash);
    return j.dump();
}

void canonicalize(std::vector<ScoreResult>& results) {
    std::stable_sort(results.begin(), results.end(),
                     [](const ScoreResult& a, const ScoreResult& b) { return sample_id_of(a) < sample_id_of(b); });
}

std::string first_duplicate_id(const std::vector<ScoreResult>& canonical) {
    for (std::size_t i = 1; i < canonical.size(); ++i) {
        if (sample_id_of(canonical[i]) == sample_id_of(canonical[i - 1])) return sample_id_of(canonical[i]);
    }
    return {};
}

void write_score_file(const std::filesystem::path& path, const std::vector<ScoreResult>& canonical,
                      std::string_view config_hash) {
    detail::AtomicFile file(path);
    std::string line;
    for (const auto& r : canonical) {
        line = format_score_line(r, config_hash);
        line.push_back('\n');
        file.write(line.data(), line.size());
    }
    file.commit();
}

void for_each_score(const std::filesystem::path& path,
                    const std::function<void(ScoreResult&&, const std::string& config_hash)>& visit) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open score file " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const std::string hash = j.value("config_hash", std::string{});
            if (j.contains("error")) {
                RecordError err;
                err.sample_id = j.at("sample_id").get<std::string>();
                err.code = parse_error_code(j.at("error").get<std::string>()).value_or(ErrorCode::CorruptFrame);
                err.message = j.value("message", std::string{});
                visit(std::move(err), hash);
                continue;
            }
            ScoreRecord r;
            r.sample_id = j.at("sample_id").get<std::string>();
            r.scored_tokens = j.at("scored_tokens").get<std::uint64_t>();
            r.total_tokens = j.at("total_tokens").get<std::uint64_t>();
            r.oov_tokens = j.at("oov_tokens").get<std::uint64_t>();
            r.source = j.value("source", std::string{});
            const bool empty = j.value("empty_scope", false);
            if (empty != (r.scored_tokens == 0) || (empty != j.at("S").is_null())) {
                throw Error(ErrorCode::CorruptFrame, "empty_scope flag disagrees with S/scored_tokens");
            }
            if (!empty) {
                r.score = j.at("S").get<double>();
                r.mean = j.at("mu").get<double>();
                r.max = j.at("m").get<double>();
                r.coverage = j.at("kappa").get<double>();
            }
            visit(std::move(r), hash);
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::CorruptFrame, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        } catch (const Error& ex) {
            throw Error(ex.code(), path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
}

ScoreFile read_score_file(const std::filesystem::path& path) {
    ScoreFile out;
    std::set<std::string> hashes;
    for_each_score(path, [&](ScoreResult&& r, const std::string& hash) {
        hashes.insert(hash);
        if (auto* rec = std::get_if<ScoreRecord>(&r)) {
            out.records.push_back(std::move(*rec));
        } else {
            out.errors.push_back(std::get<RecordError>(std::move(r)));
        }
    });
    out.config_hashes.assign(hashes.begin(), hashes.end());
    return out;
}

} // namespace trim
