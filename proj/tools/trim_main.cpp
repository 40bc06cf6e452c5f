// SPDX-License-Identifier: Apache-2.0
// trim: coreset selection from attention saliency and token fingerprints.
//
// Exit status: 0 success, 1 general failure or no fingerprints, 2 invalid
// input / referential gap / record error under --strict, 3 configuration or
// dimension mismatch between artifacts, 64 usage error.

#include "trim/config.hpp"
#include "trim/error.hpp"
#include "trim/fingerprint.hpp"
#include "trim/interchange.hpp"
#include "trim/saliency.hpp"
#include "trim/score_io.hpp"
#include "trim/scorer.hpp"
#include "trim/selector.hpp"
#include "trim/validate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitMismatch = 3;
constexpr int kExitUsage = 64;

enum class Verbosity { Quiet, Info, Debug };

Verbosity verbosity() {
    static const Verbosity level = [] {
        const char* env = std::getenv("TRIM_LOG");
        const std::string v = env == nullptr ? "" : env;
        if (v == "quiet" || v == "error" || v == "0") return Verbosity::Quiet;
        if (v == "debug" || v == "2") return Verbosity::Debug;
        return Verbosity::Info;
    }();
    return level;
}

void info(const std::string& msg) {
    if (verbosity() != Verbosity::Quiet) std::cerr << "trim: " << msg << "\n";
}

void debug(const std::string& msg) {
    if (verbosity() == Verbosity::Debug) std::cerr << "trim[debug]: " << msg << "\n";
}

int exit_code_for(trim::ErrorCode code) {
    using trim::ErrorCode;
    switch (code) {
    case ErrorCode::NoFingerprints:
    case ErrorCode::Io: return kExitFailure;
    case ErrorCode::ConfigMismatch:
    case ErrorCode::DimensionMismatch: return kExitMismatch;
    case ErrorCode::InvalidConfig: return kExitUsage;
    default: return kExitInvalid;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw trim::Error(trim::ErrorCode::Io, "cannot write " + path.string());
    }
    fs::rename(tmp, path);
}

std::string with_hash(const std::string& json_text, const std::string& hash) {
    auto j = nlohmann::ordered_json::parse(json_text);
    j["config_hash"] = hash;
    return j.dump(2) + "\n";
}

std::vector<std::uint64_t> parse_edges(const std::string& text) {
    std::vector<std::uint64_t> edges;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            edges.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw trim::Error(trim::ErrorCode::InvalidConfig, "bad bucket edge '" + item + "'");
        }
    }
    return edges;
}

// Config flags shared by the subcommands. Unset flags leave the config file
// (or the default) in charge.
struct ConfigFlags {
    std::string config_path;
    std::optional<std::size_t> layers;
    std::optional<double> w_q, w_k, w_mu, w_m, eta, lambda, top_p;
    std::optional<std::string> scope, oov;
    std::optional<std::uint64_t> top_k;
    std::optional<unsigned> workers;
    bool strict = false;

    void add_saliency(CLI::App* app) {
        app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        app->add_option("--layers", layers, "last-N attention layers to aggregate");
        app->add_option("--wq", w_q, "row saliency weight");
        app->add_option("--wk", w_k, "column saliency weight");
        add_scope(app);
    }
    void add_scope(CLI::App* app) {
        app->add_option("--scope", scope, "scoring scope")->check(CLI::IsMember({"all", "prompt", "response"}));
    }
    void add_scoring(CLI::App* app) {
        app->add_option("--wmu", w_mu, "mean pooling weight");
        app->add_option("--wm", w_m, "max pooling weight");
        app->add_option("--eta", eta, "coverage bonus weight");
        app->add_option("--lambda", lambda, "OOV backoff penalty");
        app->add_option("--oov", oov, "OOV policy")->check(CLI::IsMember({"backoff", "skip"}));
    }
    void add_budget(CLI::App* app) {
        auto* k = app->add_option("--top-k", top_k, "select the K best samples");
        auto* p = app->add_option("--top-p", top_p, "select the best fraction of samples");
        k->excludes(p);
    }
    void add_execution(CLI::App* app) {
        app->add_option("--workers", workers, "scoring threads");
        app->add_flag("--strict", strict, "abort on the first record error");
    }

    trim::PipelineConfig resolve() const {
        trim::PipelineConfig cfg;
        cfg.workers = std::max(1u, std::thread::hardware_concurrency());
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            std::ostringstream text;
            text << in.rdbuf();
            if (!in) throw trim::Error(trim::ErrorCode::Io, "cannot read config " + config_path);
            cfg.overlay_json(text.str());
        }
        if (layers) cfg.saliency.layers = *layers;
        if (w_q) cfg.saliency.w_q = *w_q;
        if (w_k) cfg.saliency.w_k = *w_k;
        if (w_mu) cfg.scoring.w_mu = *w_mu;
        if (w_m) cfg.scoring.w_m = *w_m;
        if (eta) cfg.scoring.eta = *eta;
        if (lambda) cfg.scoring.lambda = *lambda;
        if (scope) cfg.scoring.scope = trim::parse_scope(*scope);
        if (oov) cfg.scoring.oov = trim::parse_oov_policy(*oov);
        if (top_k) cfg.budget = trim::Budget::top_k(*top_k);
        if (top_p) cfg.budget = trim::Budget::top_p(*top_p);
        if (workers) cfg.workers = *workers;
        if (strict) cfg.strict = true;
        cfg.validate();
        return cfg;
    }
};

// ---------------------------------------------------------------------------

struct ValidateArgs {
    std::vector<std::string> files;
    std::optional<std::uint32_t> expect_dim;
};

int cmd_validate(const ValidateArgs& args) {
    trim::ValidateOptions options;
    options.expected_hidden_dim = args.expect_dim;
    bool ok = true;
    for (const auto& f : args.files) {
        const auto report = trim::validate_file(f, options);
        std::cout << report.to_json() << "\n";
        if (!report.ok()) {
            ok = false;
            for (const auto& c : report.checks) {
                if (!c.passed) info(f + ": " + c.name + " failed (" + c.first_offender + "): " + c.detail);
            }
        }
    }
    return ok ? kExitOk : kExitInvalid;
}

bool require_valid(const std::string& path, const trim::ValidateOptions& options = {}) {
    const auto report = trim::validate_file(path, options);
    if (report.ok()) return true;
    for (const auto& c : report.checks) {
        if (!c.passed) info(path + ": " + c.name + " failed (" + c.first_offender + "): " + c.detail);
    }
    return false;
}

struct FingerprintArgs {
    std::vector<std::string> validation;
    std::string out;
    ConfigFlags flags;
};

int cmd_fingerprint(const FingerprintArgs& args) {
    const trim::PipelineConfig cfg = args.flags.resolve();
    std::vector<trim::ValidationRecord> records;
    for (const auto& f : args.validation) {
        if (!require_valid(f)) return kExitInvalid;
        auto part = trim::read_validation_file(f);
        records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    const auto dict = trim::fingerprint_records(records, cfg.saliency, cfg.scoring.scope, cfg.hash());
    trim::save_fingerprints(dict, args.out);

    std::uint64_t occurrences = 0;
    for (const auto& [cls, e] : dict.entries) occurrences += e.occurrence_count;
    info("fingerprinted " + std::to_string(dict.entries.size()) + " classes from " + std::to_string(occurrences) +
         " occurrences in " + std::to_string(records.size()) + " samples; dropped " +
         std::to_string(dict.meta.dropped_classes.size()) + " classes, " +
         std::to_string(dict.meta.zero_norm_dropped) + " zero-norm positions; layers used " +
         std::to_string(dict.meta.layers_used) + "; config " + dict.meta.config_hash);
    return kExitOk;
}

struct ScoreArgs {
    std::vector<std::string> candidates;
    std::string fingerprints;
    std::string embeddings;
    std::string manifest;
    std::string out;
    std::size_t batch_size = 64;
    ConfigFlags flags;
};

int cmd_score(const ScoreArgs& args) {
    const trim::PipelineConfig cfg = args.flags.resolve();
    const std::string hash = cfg.hash();

    trim::FingerprintExpectations expect;
    expect.scope = cfg.scoring.scope;
    const auto dict = trim::load_fingerprints(args.fingerprints, expect);
    if (dict.meta.config_hash != hash) {
        throw trim::Error(trim::ErrorCode::ConfigMismatch, "fingerprints were built under config " +
                                                               dict.meta.config_hash + ", this run is " + hash);
    }
    for (const auto& f : args.candidates) {
        trim::CandidateReader reader(f);
        if (reader.header().hidden_dim != dict.meta.hidden_dim) {
            throw trim::Error(trim::ErrorCode::DimensionMismatch,
                              f + " has hidden dim " + std::to_string(reader.header().hidden_dim) +
                                  ", fingerprints have " + std::to_string(dict.meta.hidden_dim));
        }
    }
    std::optional<trim::EmbeddingTable> table;
    if (!args.embeddings.empty()) table = trim::read_embedding_file(args.embeddings);
    std::optional<trim::CorpusManifest> manifest;
    if (!args.manifest.empty()) manifest = trim::read_manifest(args.manifest);

    const trim::Scorer scorer(dict, table ? &*table : nullptr, cfg.scoring);
    trim::FileSetSource source({args.candidates.begin(), args.candidates.end()});
    trim::CorpusOptions options;
    options.workers = cfg.workers;
    options.batch_size = args.batch_size;
    options.strict = cfg.strict;
    options.manifest = manifest ? &*manifest : nullptr;

    std::vector<trim::ScoreResult> results;
    const auto stats = trim::score_corpus(source, scorer, options, [&](trim::ScoreResult&& r) {
        if (const auto* err = std::get_if<trim::RecordError>(&r)) {
            info("record error: " + err->sample_id + ": " + err->message);
        }
        results.push_back(std::move(r));
    });
    trim::canonicalize(results);
    if (const auto dup = trim::first_duplicate_id(results); !dup.empty()) {
        throw trim::Error(trim::ErrorCode::DuplicateSample, "sample '" + dup + "' appears in more than one record");
    }
    trim::write_score_file(args.out, results, hash);

    const double oov_rate =
        stats.scored_tokens == 0 ? 0.0 : static_cast<double>(stats.oov_tokens) / static_cast<double>(stats.scored_tokens);
    const double rate = stats.seconds > 0.0 ? static_cast<double>(stats.records) / stats.seconds : 0.0;
    char line[256];
    std::snprintf(line, sizeof line,
                  "scored %llu records (%llu errors, %llu empty scope); OOV token rate %.4f; %.0f records/s; "
                  "%u workers; config %s",
                  static_cast<unsigned long long>(stats.records - stats.errors),
                  static_cast<unsigned long long>(stats.errors), static_cast<unsigned long long>(stats.empty_scope),
                  oov_rate, rate, cfg.workers, hash.c_str());
    info(line);
    debug("OOV classes resolved: " + std::to_string(scorer.resolver().cached()) +
          "; zero-norm tokens: " + std::to_string(stats.zero_norm_tokens));
    return kExitOk;
}

struct ReportArgs {
    std::string manifest;
    std::string out_dir;
    std::string buckets;
};

void write_reports(const trim::SelectionManifest& selection, const trim::CorpusManifest& corpus,
                   const ReportArgs& args) {
    const auto edges = args.buckets.empty() ? trim::kDefaultLengthEdges : parse_edges(args.buckets);
    const auto lengths = trim::length_report(selection, corpus, edges);
    const auto subsets = trim::subset_report(selection, corpus);
    const fs::path dir = args.out_dir;
    write_text(dir / "length_report.csv", lengths.to_csv());
    write_text(dir / "length_summary.csv", lengths.summary_csv());
    write_text(dir / "length_report.json", with_hash(lengths.to_json(), selection.config_hash));
    write_text(dir / "subset_report.csv", subsets.to_csv());
    write_text(dir / "subset_report.json", with_hash(subsets.to_json(), selection.config_hash));
}

struct SelectArgs {
    std::string scores;
    ReportArgs report;
    ConfigFlags flags;
};

int cmd_select(const SelectArgs& args) {
    const trim::PipelineConfig cfg = args.flags.resolve();
    trim::ScoreFile scores = trim::read_score_file(args.scores);
    if (scores.config_hashes.size() > 1) {
        std::string all;
        for (const auto& h : scores.config_hashes) all += (all.empty() ? "" : ", ") + h;
        throw trim::Error(trim::ErrorCode::ConfigMismatch, args.scores + " mixes config hashes: " + all);
    }
    const std::string hash = scores.config_hashes.empty() ? std::string{} : scores.config_hashes.front();
    const trim::CorpusManifest corpus = trim::read_manifest(args.report.manifest);
    for (auto& rec : scores.records) {
        const auto* entry = corpus.find(rec.sample_id);
        if (entry == nullptr) {
            throw trim::Error(trim::ErrorCode::MissingManifestEntry,
                              "scored sample '" + rec.sample_id + "' is not in the corpus manifest");
        }
        rec.source = entry->source;
    }

    trim::SelectionManifest selection = trim::select_top(scores.records, cfg.budget);
    selection.config_hash = hash;
    fs::create_directories(args.report.out_dir);
    const fs::path dir = args.report.out_dir;
    trim::write_selection(dir / "selection.jsonl", selection);

    std::string excluded;
    for (const auto& id : selection.excluded) {
        nlohmann::ordered_json j;
        j["sample_id"] = id;
        j["reason"] = "empty_scope";
        j["config_hash"] = hash;
        excluded += j.dump() + "\n";
    }
    for (const auto& err : scores.errors) {
        nlohmann::ordered_json j;
        j["sample_id"] = err.sample_id;
        j["reason"] = std::string(trim::to_string(err.code));
        j["config_hash"] = hash;
        excluded += j.dump() + "\n";
    }
    write_text(dir / "excluded.jsonl", excluded);

    nlohmann::ordered_json meta;
    meta["config_hash"] = hash;
    meta["budget"] = nlohmann::ordered_json::parse(cfg.to_json())["budget"];
    meta["corpus_size"] = selection.corpus_size;
    meta["requested"] = selection.requested;
    meta["selected"] = selection.selected.size();
    meta["excluded_empty_scope"] = selection.excluded.size();
    meta["excluded_errors"] = scores.errors.size();
    write_text(dir / "selection_meta.json", meta.dump(2) + "\n");

    write_reports(selection, corpus, args.report);
    info("selected " + std::to_string(selection.selected.size()) + " of " + std::to_string(selection.corpus_size) +
         " samples (requested " + std::to_string(selection.requested) + ", " +
         std::to_string(selection.excluded.size()) + " empty-scope exclusions)");
    return kExitOk;
}

struct StandaloneReportArgs {
    std::string selection;
    ReportArgs report;
};

int cmd_report(const StandaloneReportArgs& args) {
    const auto selection = trim::read_selection(args.selection);
    const auto corpus = trim::read_manifest(args.report.manifest);
    fs::create_directories(args.report.out_dir);
    write_reports(selection, corpus, args.report);
    return kExitOk;
}

struct InspectArgs {
    std::string validation;
    std::string sample;
    std::string out;
    ConfigFlags flags;
};

int cmd_inspect(const InspectArgs& args) {
    const trim::PipelineConfig cfg = args.flags.resolve();
    if (!require_valid(args.validation)) return kExitInvalid;
    std::ofstream file;
    if (!args.out.empty()) {
        file.open(args.out, std::ios::binary | std::ios::trunc);
        if (!file) throw trim::Error(trim::ErrorCode::Io, "cannot write " + args.out);
    }
    std::ostream& out = args.out.empty() ? std::cout : file;
    trim::ValidationReader reader(args.validation);
    trim::ValidationRecord rec;
    bool found = args.sample.empty();
    while (reader.next(rec)) {
        if (!args.sample.empty() && rec.sample_id != args.sample) continue;
        found = true;
        const auto sal = trim::aggregated_saliency(rec, cfg.saliency);
        for (std::size_t i = 0; i < rec.length(); ++i) {
            nlohmann::ordered_json j;
            j["sample_id"] = rec.sample_id;
            j["position"] = i;
            j["token_class"] = rec.token_ids[i];
            j["role"] = static_cast<int>(rec.roles[i]);
            j["Q"] = sal.row[i];
            j["K"] = sal.column[i];
            j["alpha"] = sal.alpha[i];
            out << j.dump() << "\n";
        }
    }
    if (!found) throw trim::Error(trim::ErrorCode::MissingManifestEntry, "no sample '" + args.sample + "'");
    return kExitOk;
}

int cmd_config(const ConfigFlags& flags) {
    const trim::PipelineConfig cfg = flags.resolve();
    nlohmann::ordered_json j;
    j["config"] = nlohmann::ordered_json::parse(cfg.to_json());
    j["config_hash"] = cfg.hash();
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"trim: select an instruction-tuning coreset by token-level attention fingerprints"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "trim 1.0.0");

    ValidateArgs validate_args;
    auto* validate = app.add_subcommand("validate", "check record, embedding or fingerprint files");
    validate->add_option("files", validate_args.files, "files to check")->required();
    validate->add_option("--expect-dim", validate_args.expect_dim, "required hidden dimension");

    FingerprintArgs fp_args;
    auto* fingerprint = app.add_subcommand("fingerprint", "build token-class fingerprints from validation records");
    fingerprint->add_option("--val", fp_args.validation, "TRMV validation files")->required();
    fingerprint->add_option("-o,--out", fp_args.out, "output TRMF file")->required();
    fp_args.flags.add_saliency(fingerprint);
    fp_args.flags.add_scoring(fingerprint);

    ScoreArgs score_args;
    auto* score = app.add_subcommand("score", "score candidate records against fingerprints");
    score->add_option("--candidates", score_args.candidates, "TRMC candidate files")->required();
    score->add_option("--fingerprints", score_args.fingerprints, "TRMF fingerprint file")->required();
    score->add_option("--embeddings", score_args.embeddings, "TRME input-embedding table");
    score->add_option("--manifest", score_args.manifest, "corpus manifest (fills source tags)");
    score->add_option("-o,--out", score_args.out, "output score file")->required();
    score->add_option("--batch-size", score_args.batch_size, "records per work item")->check(CLI::PositiveNumber);
    score_args.flags.add_saliency(score);
    score_args.flags.add_scoring(score);
    score_args.flags.add_execution(score);

    SelectArgs select_args;
    auto* select = app.add_subcommand("select", "select the coreset and write reports");
    select->add_option("--scores", select_args.scores, "score file")->required();
    select->add_option("--manifest", select_args.report.manifest, "corpus manifest")->required();
    select->add_option("--out-dir", select_args.report.out_dir, "output directory")->required();
    select->add_option("--buckets", select_args.report.buckets, "length bucket edges, e.g. 0,128,256");
    select->add_option("--config", select_args.flags.config_path, "JSON config file")->check(CLI::ExistingFile);
    select_args.flags.add_budget(select);

    StandaloneReportArgs report_args;
    auto* report = app.add_subcommand("report", "length and source reports for a selection");
    report->add_option("--selection", report_args.selection, "selection.jsonl")->required();
    report->add_option("--manifest", report_args.report.manifest, "corpus manifest")->required();
    report->add_option("--out-dir", report_args.report.out_dir, "output directory")->required();
    report->add_option("--buckets", report_args.report.buckets, "length bucket edges, e.g. 0,128,256");

    InspectArgs inspect_args;
    auto* inspect = app.add_subcommand("inspect", "dump per-token saliency for validation records");
    inspect->add_option("--val", inspect_args.validation, "TRMV validation file")->required();
    inspect->add_option("--sample", inspect_args.sample, "only this sample_id");
    inspect->add_option("-o,--out", inspect_args.out, "output file (default stdout)");
    inspect_args.flags.add_saliency(inspect);

    ConfigFlags config_flags;
    auto* config = app.add_subcommand("config", "print the effective configuration and its hash");
    config_flags.add_saliency(config);
    config_flags.add_scoring(config);
    config_flags.add_budget(config);
    config_flags.add_execution(config);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*validate) return cmd_validate(validate_args);
        if (*fingerprint) return cmd_fingerprint(fp_args);
        if (*score) return cmd_score(score_args);
        if (*select) return cmd_select(select_args);
        if (*report) return cmd_report(report_args);
        if (*inspect) return cmd_inspect(inspect_args);
        if (*config) return cmd_config(config_flags);
    } catch (const trim::Error& e) {
        std::cerr << "trim: error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "trim: error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
