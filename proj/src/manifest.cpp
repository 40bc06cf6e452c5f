// SPDX-License-Identifier: Apache-2.0
#include "trim/error.hpp"
#include "trim/interchange.hpp"

#include "binary_io.hpp"

#include <json.hpp>

#include <fstream>

namespace trim {

void CorpusManifest::add(ManifestEntry entry) {
    const auto [it, inserted] = index_.emplace(entry.sample_id, entries_.size());
    if (!inserted) {
        throw Error(ErrorCode::DuplicateSample, "manifest repeats sample_id '" + entry.sample_id + "'");
    }
    entries_.push_back(std::move(entry));
}

const ManifestEntry* CorpusManifest::find(const std::string& sample_id) const {
    const auto it = index_.find(sample_id);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open manifest " + path.string());
    }
    CorpusManifest manifest;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.sample_id = j.at("sample_id").get<std::string>();
            e.source = j.at("source").get<std::string>();
            e.n_tokens = j.at("n_tokens").get<std::uint64_t>();
            if (auto it = j.find("prompt_len"); it != j.end() && !it->is_null()) {
                e.prompt_len = it->get<std::uint64_t>();
            }
            manifest.add(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw Error(ErrorCode::CorruptFrame,
                        path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return manifest;
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
    detail::AtomicFile file(path);
    for (const auto& e : manifest.entries()) {
        nlohmann::ordered_json j;
        j["sample_id"] = e.sample_id;
        j["source"] = e.source;
        j["n_tokens"] = e.n_tokens;
        if (e.prompt_len) j["prompt_len"] = *e.prompt_len;
        const std::string line = j.dump() + "\n";
        file.write(line.data(), line.size());
    }
    file.commit();
}

} // namespace trim
