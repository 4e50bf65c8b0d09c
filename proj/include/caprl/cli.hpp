#pragma once

// Command-line front end. `run` is the whole program minus process setup, so
// tests can drive it with argument vectors and string streams.
//
// Every command prints one JSON object on standard output:
//
//   {"command": ..., "seed": ..., "config": {...}, "config_hash": "<16 hex>", "result": {...}}
//
// where config_hash is FNV-1a over the compact dump of "config". Progress and
// warnings go to standard error. Exit codes: 0 success, 1 invalid input or
// failed check, 2 usage error.
//
// Options may also come from a TOML/INI file given with --config, one
// section per subcommand (for example [train-base] with epochs = 50).
// Command-line flags override the file.

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "caprl/critic.hpp"
#include "caprl/evaluation.hpp"
#include "caprl/feedback/http.hpp"
#include "caprl/feedback/service.hpp"
#include "caprl/gradcheck_suites.hpp"
#include "caprl/pipeline.hpp"
#include "caprl/rlhf.hpp"
#include "caprl/toy_data.hpp"

namespace caprl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string config_hash(const json& config) { return hex64(fnv1a64(config.dump())); }

inline json summary(const std::string& command, std::uint64_t seed, const json& config, json result) {
    return {{"command", command},
            {"seed", seed},
            {"config", config},
            {"config_hash", config_hash(config)},
            {"result", std::move(result)}};
}

/// Null for NaN so summaries stay valid JSON.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

inline void require_file(const fs::path& path, const char* what) {
    if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path.string());
}

/// Candidate captions from a manifest (.jsonl, first caption per image) or a
/// caption file (first caption per image), as cleaned tokens.
inline CandidateSet load_candidates(const fs::path& path) {
    require_file(path, "candidate file");
    CandidateSet out;
    if (path.extension() == ".jsonl") {
        for (const auto& e : load_manifest(path)) out.try_emplace(e.image_id, clean_caption(e.caption));
        if (out.empty()) throw EmptyCorpusError(path.string() + ": no candidate captions");
        return out;
    }
    for (const auto& [id, caps] : load_captions(path)) out[id] = clean_caption(caps.front());
    return out;
}

struct Options {
    std::uint64_t seed = 0;

    // shared paths
    std::string captions, features, images, model, critic, store, manifest, out, curve, trace, vocab_out, clean_out;
    std::string static_dir, captions_out, vocab_from;
    std::vector<std::string> candidates;

    // model and training
    std::size_t feature_dim = kDefaultFeatureDim;
    std::size_t toy_dim = kDefaultToyFeatureDim;
    std::size_t embed = 128, hidden = 256;
    std::size_t critic_embed = 64, critic_hidden = 64;
    std::size_t epochs = 10, critic_epochs = 200;
    std::size_t batch_size = 32;
    std::size_t max_len = 0;
    double lr = 1e-3;
    bool no_split = false;

    // generation, fine-tuning
    double temperature = 0.0;
    double finetune_temperature = 1.0;
    std::string mode = "literal";
    std::string feedback = "critic";
    std::size_t steps = 200;
    std::size_t eval_samples = 0;

    // evaluation
    std::size_t max_n = 4;

    // toy data
    std::size_t toy_images = 8;
    std::string toy_set = "single";

    // service
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string rater;

    // gradcheck
    std::size_t trials = 10;
    double h = 1e-5;
    std::size_t max_units = 8;
    double threshold = 1e-4;
};

struct Io {
    std::istream& in;
    std::ostream& out;
    std::ostream& err;

    WarningSink warnings() const {
        return [&e = err](const std::string& m) { e << "warning: " << m << '\n'; };
    }
    void info(const std::string& m) const { err << m << '\n'; }
};

// ---------------------------------------------------------------------------
// Commands

inline int cmd_preprocess(const Options& o, const Io& io) {
    json config = {{"captions", o.captions}, {"vocab_out", o.vocab_out}, {"clean_out", o.clean_out}};
    require_file(o.captions, "caption file");
    const auto raw = load_captions(o.captions);
    const auto clean = clean_corpus(raw);
    const auto vocab = build_vocabulary(clean);

    std::size_t captions = 0, tokens = 0, empty = 0, longest = 0;
    for (const auto& [id, caps] : clean) {
        for (const auto& c : caps) {
            ++captions;
            tokens += c.size();
            empty += c.empty() ? 1 : 0;
            longest = std::max(longest, c.size());
        }
    }
    if (empty > 0) io.info("warning: " + std::to_string(empty) + " caption(s) are empty after cleaning");
    if (!o.vocab_out.empty()) write_text_file(o.vocab_out, json(vocab.words()).dump() + "\n");
    if (!o.clean_out.empty()) {
        std::ostringstream s;
        for (const auto& [id, caps] : clean) {
            for (const auto& c : caps) s << json{{"image_id", id}, {"tokens", c}}.dump() << '\n';
        }
        write_text_file(o.clean_out, s.str());
    }
    io.out << summary("preprocess", o.seed, config,
                      {{"images", clean.size()},
                       {"captions", captions},
                       {"tokens", tokens},
                       {"empty_captions", empty},
                       {"longest_caption", longest},
                       {"vocab_size", vocab.size()},
                       {"max_len", corpus_max_len(clean, vocab)}})
                  .dump()
           << '\n';
    return 0;
}

inline int cmd_toy_data(const Options& o, const Io& io) {
    json config = {{"out", o.out}, {"images", o.toy_images}, {"set", o.toy_set}};
    if (o.toy_set != "single" && o.toy_set != "preference") {
        throw ConfigError("--set must be 'single' or 'preference'");
    }
    const fs::path dir(o.out);
    fs::create_directories(dir / "images");
    std::ostringstream captions;
    std::size_t count = 0;
    if (o.toy_set == "single") {
        const auto items = toy::corpus(o.toy_images);
        for (const auto& it : items) {
            write_text_file(dir / "images" / it.image_id, std::string(it.bytes.begin(), it.bytes.end()));
        }
        captions << toy::caption_file(items);
        count = items.size();
    } else {
        const auto items = toy::preference_set(o.toy_images);
        for (const auto& it : items) {
            write_text_file(dir / "images" / it.image_id, std::string(it.bytes.begin(), it.bytes.end()));
            for (std::size_t k = 0; k < it.captions.size(); ++k) {
                captions << it.image_id << '#' << k << '\t' << it.captions[k] << '\n';
            }
            count += it.captions.size();
        }
    }
    write_text_file(dir / "captions.txt", captions.str());
    io.out << summary("toy-data", o.seed, config, {{"images", o.toy_images}, {"captions", count}}).dump() << '\n';
    return 0;
}

inline int cmd_extract_toy_features(const Options& o, const Io& io) {
    json config = {{"images", o.images}, {"dim", o.toy_dim}, {"out", o.out}};
    if (!fs::is_directory(o.images)) throw IoError("image directory not found: " + o.images);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(o.images)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw EmptyCorpusError("no image files in " + o.images);
    FeatureTable table;
    for (const auto& f : files) {
        const auto id = f.filename().string();
        table[id] = {id, toy_extract_features(read_bytes(f), o.toy_dim)};
    }
    std::ostringstream s;
    write_features(s, table);
    write_text_file(o.out, s.str());
    io.out << summary("extract-toy-features", o.seed, config, {{"images", table.size()}, {"dim", o.toy_dim}}).dump()
           << '\n';
    return 0;
}

inline int cmd_train_base(const Options& o, const Io& io) {
    json config = {{"captions", o.captions}, {"features", o.features},     {"feature_dim", o.feature_dim},
                   {"embed", o.embed},       {"hidden", o.hidden},         {"epochs", o.epochs},
                   {"batch_size", o.batch_size}, {"lr", o.lr},             {"split", !o.no_split},
                   {"max_len", o.max_len},   {"out", o.out},               {"curve", o.curve}};
    require_file(o.captions, "caption file");
    require_file(o.features, "feature file");
    const auto clean = clean_corpus(load_captions(o.captions));
    const auto features = index_features(load_features(o.features, o.feature_dim, io.warnings()));
    const auto vocab = build_vocabulary(clean);
    const std::size_t max_len = o.max_len ? o.max_len : corpus_max_len(clean, vocab);
    const auto split = caption_examples(clean, features, vocab, max_len, !o.no_split, io.warnings());
    if (split.train.empty()) throw ValidationError("no training examples after the validation split");

    CaptionModel model;
    model.config = {o.feature_dim, o.embed, o.hidden, vocab.size(), max_len, o.seed};
    model.vocab = vocab;
    model.params = build_model(model.config);

    TrainOptions train;
    train.epochs = o.epochs;
    train.batch_size = o.batch_size;
    train.seed = o.seed ^ 0x7261696EULL;
    train.adam.lr = o.lr;
    io.info("train-base: " + std::to_string(split.train.size()) + " train / " +
            std::to_string(split.validation.size()) + " validation captions, vocab " + std::to_string(vocab.size()));
    const auto curve = train_base(model.params, split.train, split.validation, train, max_len);
    for (std::size_t e = 0; e < curve.train.size(); ++e) {
        io.info("epoch " + std::to_string(e + 1) + "/" + std::to_string(curve.train.size()) +
                " train_loss " + format_double(curve.train[e]) + " val_loss " + format_double(curve.validation[e]));
    }
    save_caption_model(o.out, model);
    if (!o.curve.empty()) {
        std::ostringstream s;
        curve.write_csv(s);
        write_text_file(o.curve, s.str());
    }
    const double final_train = curve.train.empty() ? std::nan("") : curve.train.back();
    const double final_val = curve.validation.empty() ? std::nan("") : curve.validation.back();
    io.out << summary("train-base", o.seed, config,
                      {{"train_captions", split.train.size()},
                       {"validation_captions", split.validation.size()},
                       {"skipped_long", split.skipped_long},
                       {"vocab_size", vocab.size()},
                       {"max_len", max_len},
                       {"parameters", caption_parameter_count(model.config)},
                       {"epochs", curve.train.size()},
                       {"train_loss", number_or_null(final_train)},
                       {"val_loss", number_or_null(final_val)}})
                  .dump()
           << '\n';
    return 0;
}

inline int cmd_generate(const Options& o, const Io& io) {
    json config = {{"model", o.model},       {"features", o.features},         {"temperature", o.temperature},
                   {"out", o.out},           {"captions_out", o.captions_out}};
    require_file(o.model, "model checkpoint");
    require_file(o.features, "feature file");
    const auto model = load_caption_model(o.model);
    const auto features = load_features(o.features, model.config.feature_dim, io.warnings());
    if (features.empty()) throw EmptyCorpusError("no features in " + o.features);

    Rng rng(o.seed);
    std::vector<ManifestEntry> manifest;
    std::ostringstream tsv;
    std::size_t words = 0, empty = 0;
    for (const auto& [id, f] : features) {
        const auto caption = generate_caption(model.params, model.vocab, f.vector, o.temperature, model.config.max_len, rng);
        words += caption.size();
        if (caption.empty()) {
            ++empty;
            continue;
        }
        const auto text = join_words(caption);
        manifest.push_back({id, text});
        tsv << id << "#0\t" << text << '\n';
    }
    if (empty > 0) io.info("warning: " + std::to_string(empty) + " image(s) produced an empty caption; left out");
    std::ostringstream s;
    write_manifest(s, manifest);
    write_text_file(o.out, s.str());
    if (!o.captions_out.empty()) write_text_file(o.captions_out, tsv.str());
    io.out << summary("generate", o.seed, config,
                      {{"images", features.size()},
                       {"captions", manifest.size()},
                       {"empty", empty},
                       {"mean_words", static_cast<double>(words) / static_cast<double>(features.size())}})
                  .dump()
           << '\n';
    return 0;
}

inline int cmd_bleu(const Options& o, const Io& io) {
    json config = {{"references", o.captions}, {"candidates", o.candidates}, {"max_n", o.max_n}};
    require_file(o.captions, "reference file");
    const auto refs = build_references(clean_corpus(load_captions(o.captions)));
    json results = json::array();
    for (const auto& path : o.candidates) {
        const auto report = corpus_bleu(load_candidates(path), refs, o.max_n);
        json r = to_json_report(report);
        r["path"] = path;
        r["candidate_length"] = report.candidate_length;
        r["reference_length"] = report.reference_length;
        results.push_back(std::move(r));
    }
    json result = {{"candidates", results}};
    if (results.size() == 2) result["delta"] = results[1]["score"].get<double>() - results[0]["score"].get<double>();
    io.out << summary("bleu", o.seed, config, std::move(result)).dump() << '\n';
    return 0;
}

inline int cmd_serve(const Options& o, const Io& io) {
    json config = {{"manifest", o.manifest}, {"store", o.store},           {"images", o.images},
                   {"static", o.static_dir}, {"host", o.host},             {"port", o.port}};
    require_file(o.manifest, "manifest");
    FeedbackStore store(o.store, io.warnings());
    FeedbackService service(store, load_manifest(o.manifest, io.warnings()));
    FeedbackHttpServer server(service, {o.images, o.static_dir});

    // Block the stop signals before starting threads so only sigwait sees them.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    const int port = server.bind(o.host, o.port);
    const auto progress = service.progress();
    io.out << summary("serve-feedback", o.seed, config,
                      {{"host", o.host}, {"port", port}, {"tasks", progress.total}, {"rated", progress.rated}})
                  .dump()
           << std::endl;
    std::thread worker([&] { server.serve(); });
    int sig = 0;
    sigwait(&stop_signals, &sig);
    io.info("serve-feedback: stopping on signal " + std::to_string(sig));
    server.stop();
    worker.join();
    pthread_sigmask(SIG_UNBLOCK, &stop_signals, nullptr);
    return 0;
}

inline int cmd_rate(const Options& o, const Io& io) {
    json config = {{"manifest", o.manifest}, {"store", o.store}, {"rater", o.rater}};
    require_file(o.manifest, "manifest");
    FeedbackStore store(o.store, io.warnings());
    FeedbackService service(store, load_manifest(o.manifest, io.warnings()));
    std::size_t rated = 0;
    while (auto task = service.next_task(o.rater)) {
        io.err << "[" << task->task_id << "] " << task->image_id << "\n  " << task->caption_text
               << "\nrating in [-1, 1] (blank line to stop): " << std::flush;
        std::string line;
        if (!std::getline(io.in, line)) break;
        if (line.find_first_not_of(" \t\r") == std::string::npos) break;
        double rating = 0.0;
        try {
            std::size_t used = 0;
            rating = std::stod(line, &used);
            if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(line);
        } catch (const std::exception&) {
            io.info("not a number; try again");
            continue;
        }
        try {
            service.submit_rating(task->task_id, o.rater, rating);
            ++rated;
        } catch (const ValidationError& e) {
            io.info(e.what());
        }
    }
    const auto progress = service.progress();
    io.out << summary("rate", o.seed, config,
                      {{"rated_now", rated}, {"tasks", progress.total}, {"tasks_rated", progress.rated}})
                  .dump()
           << '\n';
    return 0;
}

inline int cmd_train_critic(const Options& o, const Io& io) {
    json config = {{"store", o.store},          {"features", o.features},   {"feature_dim", o.feature_dim},
                   {"embed", o.critic_embed},   {"hidden", o.critic_hidden}, {"epochs", o.critic_epochs},
                   {"batch_size", o.batch_size}, {"lr", o.lr},              {"vocab_from", o.vocab_from},
                   {"out", o.out}};
    require_file(o.store, "feedback store");
    require_file(o.features, "feature file");
    const auto contents = parse_store([&] {
        std::ifstream in(o.store, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }());
    if (contents.skipped > 0) io.info("warning: skipped " + std::to_string(contents.skipped) + " corrupt store line(s)");
    const auto records = deduplicate(contents.records);
    if (records.empty()) throw ValidationError("feedback store has no usable records");
    const auto features = load_features(o.features, o.feature_dim, io.warnings());

    Vocabulary vocab;
    if (!o.vocab_from.empty()) {
        vocab = load_caption_model(o.vocab_from).vocab;
    } else {
        std::vector<std::vector<std::string>> lists;
        for (const auto& r : records) lists.push_back(clean_caption(r.caption_text));
        vocab = build_vocabulary(std::span<const std::vector<std::string>>(lists));
    }

    Critic critic;
    critic.config = {o.feature_dim, o.critic_embed, o.critic_hidden, vocab.size(), o.seed};
    critic.vocab = vocab;
    CriticTrainOptions train;
    train.epochs = o.critic_epochs;
    train.batch_size = o.batch_size;
    train.seed = o.seed ^ 0x63726974ULL;
    train.adam.lr = o.lr;
    auto result = train_critic(records, features, vocab, critic.config, train);
    critic.params = std::move(result.params);
    save_critic(o.out, critic);
    io.out << summary("train-critic", o.seed, config,
                      {{"records", records.size()},
                       {"skipped_lines", contents.skipped},
                       {"vocab_size", vocab.size()},
                       {"epochs", result.mse_curve.size()},
                       {"final_mse", number_or_null(result.mse_curve.empty() ? std::nan("") : result.mse_curve.back())}})
                  .dump()
           << '\n';
    return 0;
}

inline int cmd_finetune(const Options& o, const Io& io) {
    json config = {{"model", o.model},        {"captions", o.captions},   {"features", o.features},
                   {"critic", o.critic},      {"feedback", o.feedback},   {"mode", o.mode},
                   {"steps", o.steps},        {"temperature", o.finetune_temperature},
                   {"lr", o.lr},              {"eval_samples", o.eval_samples},
                   {"out", o.out},            {"trace", o.trace}};
    const auto mode = parse_finetune_mode(o.mode);
    if (o.feedback != "critic" && o.feedback != "overlap") throw ConfigError("--feedback must be 'critic' or 'overlap'");
    require_file(o.model, "model checkpoint");
    require_file(o.captions, "caption file");
    require_file(o.features, "feature file");
    if (o.feedback == "critic") require_file(o.critic, "critic checkpoint");

    auto model = load_caption_model(o.model);
    const auto clean = clean_corpus(load_captions(o.captions));
    const auto features = index_features(load_features(o.features, model.config.feature_dim, io.warnings()));
    const auto split = caption_examples(clean, features, model.vocab, model.config.max_len, false, io.warnings());
    const auto dataset = finetune_examples(split.train);
    if (dataset.empty()) throw ValidationError("finetune: no usable human captions");

    FeedbackFn feedback;
    if (o.feedback == "critic") {
        const auto critic = load_critic(o.critic);
        if (critic.config.feature_dim != model.config.feature_dim) {
            throw DimensionError("critic feature_dim " + std::to_string(critic.config.feature_dim) +
                                 " does not match caption model feature_dim " +
                                 std::to_string(model.config.feature_dim));
        }
        feedback = critic_feedback(critic.params, critic.vocab, model.vocab, io.warnings());
    } else {
        feedback = overlap_feedback(build_references(clean), model.vocab);
    }

    FinetuneOptions ft;
    ft.mode = mode;
    ft.steps = o.steps;
    ft.temperature = o.finetune_temperature;
    ft.max_len = model.config.max_len;
    ft.seed = o.seed;
    ft.adam.lr = o.lr;

    const std::uint64_t eval_seed = o.seed ^ 0x6576616CULL;
    json result;
    if (o.eval_samples > 0) {
        result["quality_before"] = generation_quality(model.params, dataset, feedback, o.finetune_temperature,
                                                      o.eval_samples, model.config.max_len, eval_seed)
                                       .mean;
    }
    const auto trace = finetune(model.params, dataset, feedback, ft);
    if (o.eval_samples > 0) {
        result["quality_after"] = generation_quality(model.params, dataset, feedback, o.finetune_temperature,
                                                     o.eval_samples, model.config.max_len, eval_seed)
                                      .mean;
        result["quality_delta"] = result["quality_after"].get<double>() - result["quality_before"].get<double>();
    }
    save_caption_model(o.out, model);
    if (!o.trace.empty()) {
        std::ostringstream s;
        trace.write_csv(s);
        write_text_file(o.trace, s.str());
    }
    double fb = 0.0, ce = 0.0;
    for (const auto& r : trace.rows) {
        fb += r.feedback;
        ce += r.ce;
    }
    const double n = static_cast<double>(trace.rows.size());
    result["steps"] = trace.rows.size();
    result["dataset"] = dataset.size();
    result["mean_feedback"] = fb / n;
    result["mean_ce"] = ce / n;
    result["mode"] = to_string(mode);
    io.out << summary("finetune", o.seed, config, std::move(result)).dump() << '\n';
    return 0;
}

inline int cmd_gradcheck(const Options& o, const Io& io) {
    json config = {{"trials", o.trials}, {"h", o.h}, {"max_units", o.max_units}, {"threshold", o.threshold}};
    GradcheckSuiteOptions g;
    g.trials = o.trials;
    g.h = o.h;
    g.seed = o.seed;
    g.max_units = o.max_units;
    json suites = json::array();
    double worst = 0.0;
    for (const auto& r : run_gradcheck_suites(g)) {
        io.info("gradcheck " + r.name + ": max_rel_error " + format_double(r.max_rel_error) + " (" + r.worst + ")");
        suites.push_back({{"name", r.name},
                          {"trials", r.trials},
                          {"checked", r.checked},
                          {"max_rel_error", r.max_rel_error},
                          {"worst", r.worst}});
        worst = std::max(worst, r.max_rel_error);
    }
    const bool passed = worst < o.threshold;
    io.out << summary("gradcheck", o.seed, config, {{"suites", suites}, {"max_rel_error", worst}, {"passed", passed}})
                  .dump()
           << '\n';
    return passed ? 0 : 1;
}

// ---------------------------------------------------------------------------
// Argument parsing

inline int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"caprl: image captioning with a human-feedback fine-tuning stage"};
    app.name("caprl");
    app.set_config("--config", "", "TOML/INI file with one [section] per subcommand; flags override it");
    app.require_subcommand(1);
    app.fallthrough();

    auto seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Random seed")->capture_default_str(); };
    auto model_dims = [&](CLI::App* sub) {
        sub->add_option("--feature-dim", o.feature_dim, "Image feature length")->capture_default_str();
    };

    auto* preprocess = app.add_subcommand("preprocess", "Clean captions, build the vocabulary, print corpus stats");
    preprocess->add_option("--captions", o.captions, "Caption file (name#k<TAB>caption)")->required();
    preprocess->add_option("--vocab-out", o.vocab_out, "Write the vocabulary as a JSON list");
    preprocess->add_option("--clean-out", o.clean_out, "Write cleaned captions as JSONL");
    seed(preprocess);

    auto* toy = app.add_subcommand("toy-data", "Write a small synthetic image/caption corpus");
    toy->add_option("--out", o.out, "Output directory")->required();
    toy->add_option("--images", o.toy_images, "Number of images (1..16)")->capture_default_str();
    toy->add_option("--set", o.toy_set, "single (one caption per image) or preference (three)")->capture_default_str();
    seed(toy);

    auto* extract = app.add_subcommand("extract-toy-features", "Deterministic byte-statistics features for every file");
    extract->add_option("--images", o.images, "Directory of image files")->required();
    extract->add_option("--dim", o.toy_dim, "Feature length")->capture_default_str();
    extract->add_option("--out", o.out, "Output JSONL")->required();
    seed(extract);

    auto* train = app.add_subcommand("train-base", "Train the caption model on human captions");
    train->add_option("--captions", o.captions, "Caption file")->required();
    train->add_option("--features", o.features, "Feature JSONL")->required();
    model_dims(train);
    train->add_option("--embed", o.embed, "Word embedding size")->capture_default_str();
    train->add_option("--hidden", o.hidden, "LSTM hidden size")->capture_default_str();
    train->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
    train->add_option("--batch-size", o.batch_size, "Pairs per Adam step")->capture_default_str();
    train->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    train->add_option("--max-len", o.max_len, "Sequence length cap (0: longest caption, at most 32)");
    train->add_flag("--no-split", o.no_split, "Train on every image (no validation fifth)");
    train->add_option("--out", o.out, "Model checkpoint to write")->required();
    train->add_option("--curve", o.curve, "Loss curve CSV to write");
    seed(train);

    auto* generate = app.add_subcommand("generate", "Caption every image; write a rating manifest");
    generate->add_option("--model", o.model, "Model checkpoint")->required();
    generate->add_option("--features", o.features, "Feature JSONL")->required();
    generate->add_option("--temperature", o.temperature, "0 = greedy")->capture_default_str();
    generate->add_option("--out", o.out, "Manifest JSONL to write")->required();
    generate->add_option("--captions-out", o.captions_out, "Also write a caption file");
    seed(generate);

    auto* bleu = app.add_subcommand("bleu", "Corpus BLEU of one or two caption sets against references");
    bleu->add_option("--references", o.captions, "Reference caption file")->required();
    bleu->add_option("--candidates", o.candidates, "Manifest (.jsonl) or caption file; give one or two")
        ->required()
        ->expected(1, 2);
    bleu->add_option("--max-n", o.max_n, "Largest n-gram order")->capture_default_str();
    seed(bleu);

    auto* serve = app.add_subcommand("serve-feedback", "Serve rating tasks over HTTP until interrupted");
    serve->add_option("--manifest", o.manifest, "Manifest JSONL")->required();
    serve->add_option("--store", o.store, "Feedback JSONL store")->required();
    serve->add_option("--images", o.images, "Directory served under /images");
    serve->add_option("--static", o.static_dir, "Static bundle served at /");
    serve->add_option("--host", o.host, "Listen address")->capture_default_str();
    serve->add_option("--port", o.port, "Listen port (0 picks one)")->capture_default_str();
    seed(serve);

    auto* rate = app.add_subcommand("rate", "Rate tasks from the terminal");
    rate->add_option("--manifest", o.manifest, "Manifest JSONL")->required();
    rate->add_option("--store", o.store, "Feedback JSONL store")->required();
    rate->add_option("--rater", o.rater, "Rater id")->required();
    seed(rate);

    auto* critic = app.add_subcommand("train-critic", "Fit the critic to the stored ratings");
    critic->add_option("--store", o.store, "Feedback JSONL store")->required();
    critic->add_option("--features", o.features, "Feature JSONL")->required();
    model_dims(critic);
    critic->add_option("--embed", o.critic_embed, "Critic embedding size")->capture_default_str();
    critic->add_option("--hidden", o.critic_hidden, "Critic hidden size")->capture_default_str();
    critic->add_option("--epochs", o.critic_epochs, "Training epochs")->capture_default_str();
    critic->add_option("--batch-size", o.batch_size, "Records per Adam step")->capture_default_str();
    critic->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    critic->add_option("--vocab-from", o.vocab_from, "Reuse a caption model's vocabulary");
    critic->add_option("--out", o.out, "Critic checkpoint to write")->required();
    seed(critic);

    auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune the caption model with feedback");
    finetune_cmd->add_option("--model", o.model, "Base model checkpoint")->required();
    finetune_cmd->add_option("--captions", o.captions, "Human caption file")->required();
    finetune_cmd->add_option("--features", o.features, "Feature JSONL")->required();
    finetune_cmd->add_option("--critic", o.critic, "Critic checkpoint (with --feedback critic)");
    finetune_cmd->add_option("--feedback", o.feedback, "critic or overlap (synthetic 2*F1-1)")->capture_default_str();
    finetune_cmd->add_option("--mode", o.mode, "literal or advantage")->capture_default_str();
    finetune_cmd->add_option("--steps", o.steps, "Update steps (0: one pass)")->capture_default_str();
    finetune_cmd->add_option("--temperature", o.finetune_temperature, "Sampling temperature")->capture_default_str();
    finetune_cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
    finetune_cmd->add_option("--eval-samples", o.eval_samples, "Samples per image for before/after quality");
    finetune_cmd->add_option("--out", o.out, "Model checkpoint to write")->required();
    finetune_cmd->add_option("--trace", o.trace, "Per-step trace CSV");
    seed(finetune_cmd);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every backward pass");
    gradcheck->add_option("--trials", o.trials, "Seeded trials per suite")->capture_default_str();
    gradcheck->add_option("--step", o.h, "Central-difference step")->capture_default_str();
    gradcheck->add_option("--max-units", o.max_units, "Largest dimension drawn")->capture_default_str();
    gradcheck->add_option("--threshold", o.threshold, "Pass when every relative error is below this")
        ->capture_default_str();
    seed(gradcheck);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    const Io io{in, out, err};
    try {
        if (*preprocess) return cmd_preprocess(o, io);
        if (*toy) return cmd_toy_data(o, io);
        if (*extract) return cmd_extract_toy_features(o, io);
        if (*train) return cmd_train_base(o, io);
        if (*generate) return cmd_generate(o, io);
        if (*bleu) return cmd_bleu(o, io);
        if (*serve) return cmd_serve(o, io);
        if (*rate) return cmd_rate(o, io);
        if (*critic) return cmd_train_critic(o, io);
        if (*finetune_cmd) return cmd_finetune(o, io);
        if (*gradcheck) return cmd_gradcheck(o, io);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace caprl::cli
