// sknn: style-locality kNN language modeling pipeline, one subcommand per
// stage. Artifacts are passed by path; every stage is deterministic given
// --seed, and the resolved configuration is logged next to each output.

#include "sknn/evaluation.hpp"
#include "sknn/kernels.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sknn;

namespace {

// Sidecar log: timestamp plus the resolved config. Primary artifacts stay
// byte-identical across reruns; anything wall-clock lives here.
void write_run_log(const fs::path& primary_out, const std::string& subcommand,
                   const json& config) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));

    json log = {{"timestamp", stamp},
                {"subcommand", subcommand},
                {"kernel_backend", kernels::backend_name(kernels::active_backend())},
                {"config", config}};
    fs::path p = primary_out;
    p += ".run.log";
    atomic_write_file(p, log.dump(2) + "\n");
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string::npos) end = text.size();
        const std::string item = text.substr(start, end - start);
        if (!item.empty()) {
            try {
                grid.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("bad lambda grid value: " + item);
            }
        }
        if (end == text.size()) break;
        start = end + 1;
    }
    if (grid.empty()) throw ConfigError("empty lambda grid");
    return grid;
}

std::uint16_t resolve_style(const StyleTaxonomy& taxonomy, const std::string& name) {
    auto id = taxonomy.style_index(name);
    if (!id) throw ConfigError("unknown style: " + name);
    return *id;
}

struct Artifacts {
    CorpusBundle bundle;
    LMParameters params;
    std::optional<Datastore> store;
    std::optional<IvfIndex> ivf;
};

// Shared flag block for the query-side subcommands.
struct QueryFlags {
    std::string bundle_path, model_path, datastore_path, ivf_path;
    std::size_t k = 64;
    double lambda = 0.25;
    std::uint32_t n_probe = 0; // 0 = index default
    std::string metric;        // empty = store default
    std::string weights_path;

    void add_common(CLI::App* cmd, bool need_store) {
        cmd->add_option("--bundle", bundle_path, "prepared corpus bundle")->required();
        cmd->add_option("--model", model_path, "model checkpoint")->required();
        auto* ds = cmd->add_option("--datastore", datastore_path, "datastore file");
        if (need_store) ds->required();
        cmd->add_option("--ivf", ivf_path, "IVF index file (enables approximate retrieval)");
        cmd->add_option("--n-probe", n_probe, "clusters to probe (default: index default)");
        cmd->add_option("--k", k, "neighbors to retrieve")->capture_default_str();
        cmd->add_option("--lambda", lambda, "interpolation coefficient")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        cmd->add_option("--metric", metric, "distance the softmax consumes: squared_l2|l2");
        cmd->add_option("--weights", weights_path, "locality weights file");
    }

    Artifacts load(bool need_store) const {
        Artifacts a;
        a.bundle = CorpusBundle::load(bundle_path);
        a.params = load_checkpoint(model_path);
        if (a.params.config.vocab_size != a.bundle.vocab.size()) {
            throw ConfigError("model vocabulary size does not match the bundle");
        }
        if (!datastore_path.empty()) {
            a.store = Datastore::open(datastore_path);
        } else if (need_store) {
            throw ConfigError("this subcommand needs --datastore");
        }
        if (!ivf_path.empty()) {
            if (!a.store) throw ConfigError("--ivf requires --datastore");
            a.ivf = IvfIndex::load(ivf_path, *a.store);
        }
        return a;
    }

    KnnLmConfig knn_config(const Artifacts& a) const {
        KnnLmConfig c;
        c.k = k;
        c.lambda = lambda;
        c.metric = metric.empty() ? a.store->header().distance : parse_distance(metric);
        if (a.ivf) {
            c.mode = RetrievalMode::ivf;
            c.n_probe = n_probe == 0 ? a.ivf->n_probe_default : n_probe;
        }
        return c;
    }

    LocalityWeights weights() const {
        if (weights_path.empty()) return LocalityWeights::identity(LocalityFeatureSet::none());
        return load_weights(weights_path);
    }

    json config_json() const {
        return {{"bundle", bundle_path},       {"model", model_path},
                {"datastore", datastore_path}, {"ivf", ivf_path},
                {"k", k},                      {"lambda", lambda},
                {"n_probe", n_probe},          {"metric", metric},
                {"weights", weights_path}};
    }
};

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open prompts file: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

int run(int argc, char** argv) {
    CLI::App app{"style-locality kNN language modeling toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    unsigned threads = 0;
    app.add_option("--seed", seed, "seed for every random choice in the run")
        ->capture_default_str();
    app.add_option("--threads", threads, "worker threads (0 = all logical processors)")
        ->capture_default_str();

    // ---- synth-corpus ----
    auto* synth = app.add_subcommand("synth-corpus", "generate a styled synthetic corpus");
    std::string synth_taxonomy, synth_out;
    std::size_t docs_per_style = 200;
    synth->add_option("--taxonomy", synth_taxonomy, "taxonomy config file")->required();
    synth->add_option("--out", synth_out, "output JSONL path")->required();
    synth->add_option("--docs-per-style", docs_per_style)->capture_default_str();

    // ---- ingest ----
    auto* ingest = app.add_subcommand("ingest", "build a corpus bundle from JSONL");
    std::string ingest_taxonomy, ingest_corpus, ingest_out;
    std::uint32_t min_count = 5;
    bool no_auto_split = false;
    ingest->add_option("--taxonomy", ingest_taxonomy)->required();
    ingest->add_option("--corpus", ingest_corpus, "JSONL corpus")->required();
    ingest->add_option("--out", ingest_out, "output bundle path")->required();
    ingest->add_option("--min-count", min_count, "vocabulary minimum count")
        ->capture_default_str();
    ingest->add_flag("--no-auto-split", no_auto_split,
                     "keep records without a split field in train instead of 80/10/10");

    // ---- train-lm ----
    auto* train = app.add_subcommand("train-lm", "train the base language model");
    std::string train_bundle, train_out;
    LMConfig lm_config;
    train->add_option("--bundle", train_bundle)->required();
    train->add_option("--out", train_out, "output checkpoint path")->required();
    train->add_option("--context-window", lm_config.context_window)->capture_default_str();
    train->add_option("--embed-dim", lm_config.embedding_dim)->capture_default_str();
    train->add_option("--hidden-dim", lm_config.hidden_dim,
                      "encoder output size == datastore key dimension")
        ->capture_default_str();
    train->add_option("--lr", lm_config.learning_rate)->capture_default_str();
    train->add_option("--epochs", lm_config.epochs)->capture_default_str();
    train->add_option("--batch-size", lm_config.batch_size)->capture_default_str();

    // ---- build-datastore ----
    auto* build_ds = app.add_subcommand("build-datastore", "encode the corpus into a datastore");
    std::string bds_bundle, bds_model, bds_out, bds_distance = "squared_l2",
                bds_split = "train";
    build_ds->add_option("--bundle", bds_bundle)->required();
    build_ds->add_option("--model", bds_model)->required();
    build_ds->add_option("--out", bds_out)->required();
    build_ds->add_option("--distance", bds_distance, "query default: squared_l2|l2")
        ->capture_default_str();
    build_ds->add_option("--split", bds_split, "which split to index")->capture_default_str();

    // ---- build-ivf ----
    auto* build_index = app.add_subcommand("build-ivf", "cluster a datastore for fast search");
    std::string bi_store, bi_out;
    std::uint32_t bi_clusters = 64, bi_probe = 0;
    build_index->add_option("--datastore", bi_store)->required();
    build_index->add_option("--out", bi_out)->required();
    build_index->add_option("--clusters", bi_clusters)->capture_default_str();
    build_index->add_option("--default-probe", bi_probe,
                            "default n_probe stored in the index (0 = clusters/4)");

    // ---- train-locality ----
    auto* train_loc = app.add_subcommand("train-locality", "learn locality distance weights");
    std::string tl_bundle, tl_model, tl_store, tl_out, tl_features = "style,source",
                tl_metric;
    LocalityTrainOptions tl_options;
    std::size_t tl_sample_size = 2000;
    train_loc->add_option("--bundle", tl_bundle)->required();
    train_loc->add_option("--model", tl_model)->required();
    train_loc->add_option("--datastore", tl_store)->required();
    train_loc->add_option("--out", tl_out, "output weights file")->required();
    train_loc->add_option("--features", tl_features, "subset of style,source,category")
        ->capture_default_str();
    train_loc->add_option("--k", tl_options.k)->capture_default_str();
    train_loc->add_option("--sample-size", tl_sample_size)->capture_default_str();
    train_loc->add_option("--lr", tl_options.learning_rate)->capture_default_str();
    train_loc->add_option("--epochs", tl_options.epochs)->capture_default_str();
    train_loc->add_option("--metric", tl_metric, "squared_l2|l2 (default: store flag)");

    // ---- eval-ppl ----
    auto* eval = app.add_subcommand("eval-ppl", "perplexity of the combined model");
    QueryFlags eval_flags;
    std::string eval_split = "test", eval_restrict, eval_out;
    eval_flags.add_common(eval, /*need_store=*/false);
    eval->add_option("--split", eval_split)->capture_default_str();
    eval->add_option("--restrict-style", eval_restrict,
                     "retrieve only entries of this style");
    eval->add_option("--out", eval_out, "optional JSON report path");

    // ---- ablate ----
    auto* ablate = app.add_subcommand("ablate", "perplexity across locality feature subsets");
    QueryFlags ab_flags;
    std::string ab_grid, ab_rows, ab_out;
    AblationOptions ab_options;
    ab_flags.add_common(ablate, /*need_store=*/true);
    ablate->add_option("--lambda-grid", ab_grid, "comma-separated lambda values");
    ablate->add_option("--rows", ab_rows,
                       "semicolon-separated feature subsets (default: the seven standard rows)");
    ablate->add_option("--sample-size", ab_options.sample_size)->capture_default_str();
    ablate->add_option("--locality-lr", ab_options.locality_lr)->capture_default_str();
    ablate->add_option("--locality-epochs", ab_options.locality_epochs)->capture_default_str();
    ablate->add_option("--out", ab_out, "output report path")->required();

    // ---- heatmap ----
    auto* heatmap = app.add_subcommand("heatmap", "style similarity matrix from the encoder");
    std::string hm_bundle, hm_model, hm_out, hm_json;
    bool hm_present_only = false;
    heatmap->add_option("--bundle", hm_bundle)->required();
    heatmap->add_option("--model", hm_model)->required();
    heatmap->add_option("--out", hm_out, "output CSV path")->required();
    heatmap->add_option("--json", hm_json, "optional JSON report path");
    heatmap->add_flag("--present-only", hm_present_only,
                      "only styles that occur in the corpus");

    // ---- generate ----
    auto* gen = app.add_subcommand("generate", "style-conditioned completion");
    QueryFlags gen_flags;
    std::string gen_style, gen_prompts_file, gen_mode = "greedy", gen_out;
    std::vector<std::string> gen_prompts;
    std::size_t gen_max_new = 24, gen_n_prompts = 8, gen_top_k = 0;
    double gen_temperature = 1.0;
    bool gen_restrict = false;
    gen_flags.add_common(gen, /*need_store=*/true);
    gen->add_option("--style", gen_style, "target style name")->required();
    gen->add_option("--prompt", gen_prompts, "prompt text (repeatable)");
    gen->add_option("--prompts-file", gen_prompts_file, "one prompt per line");
    gen->add_option("--n-prompts", gen_n_prompts,
                    "prompts sampled from the test split when none are given")
        ->capture_default_str();
    gen->add_option("--max-new-tokens", gen_max_new)->capture_default_str();
    gen->add_option("--mode", gen_mode, "greedy|sample")->capture_default_str();
    gen->add_option("--temperature", gen_temperature)->capture_default_str();
    gen->add_option("--top-k-tokens", gen_top_k, "sampling shortlist (0 = all)");
    gen->add_flag("--restrict-style", gen_restrict,
                  "mask retrieval to the target style (needs a style-feature weights file)");
    gen->add_option("--out", gen_out, "output JSONL path")->required();

    // ---- compare ----
    auto* cmp = app.add_subcommand("compare", "side-by-side model comparison");
    QueryFlags cmp_flags; // --weights = model A weights
    std::string cmp_weights_b, cmp_style, cmp_prompts_file, cmp_out, cmp_summary,
        cmp_mode = "greedy";
    std::size_t cmp_n_prompts = 100, cmp_max_new = 24, cmp_top_k = 0;
    double cmp_lambda_b = -1.0, cmp_temperature = 1.0;
    bool cmp_restrict_a = false, cmp_restrict_b = false;
    cmp_flags.add_common(cmp, /*need_store=*/true);
    cmp->add_option("--weights-b", cmp_weights_b, "weights for model B (default: identity)");
    cmp->add_option("--lambda-b", cmp_lambda_b, "lambda for model B (default: --lambda)");
    cmp->add_flag("--restrict-a", cmp_restrict_a, "style-mask model A retrieval");
    cmp->add_flag("--restrict-b", cmp_restrict_b, "style-mask model B retrieval");
    cmp->add_option("--style", cmp_style, "force one target style for every prompt");
    cmp->add_option("--prompts-file", cmp_prompts_file);
    cmp->add_option("--n-prompts", cmp_n_prompts)->capture_default_str();
    cmp->add_option("--max-new-tokens", cmp_max_new)->capture_default_str();
    cmp->add_option("--mode", cmp_mode, "greedy|sample")->capture_default_str();
    cmp->add_option("--temperature", cmp_temperature)->capture_default_str();
    cmp->add_option("--top-k-tokens", cmp_top_k);
    cmp->add_option("--out", cmp_out, "per-prompt JSONL path")->required();
    cmp->add_option("--summary", cmp_summary, "aggregate JSON path");

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
        return 2;
    }

    set_default_threads(threads == 0 ? default_threads() : threads);

    if (synth->parsed()) {
        const auto taxonomy = StyleTaxonomy::load(synth_taxonomy);
        const auto records = generate_synthetic_corpus(taxonomy, docs_per_style, seed);
        atomic_write_file(synth_out, records_to_jsonl(records, taxonomy));
        json config = {{"taxonomy", synth_taxonomy},
                       {"out", synth_out},
                       {"docs_per_style", docs_per_style},
                       {"seed", seed}};
        write_run_log(synth_out, "synth-corpus", config);
        std::printf("wrote %zu records to %s\n", records.size(), synth_out.c_str());
        return 0;
    }

    if (ingest->parsed()) {
        const auto taxonomy = StyleTaxonomy::load(ingest_taxonomy);
        auto records = ingest_jsonl(ingest_corpus, taxonomy);
        if (!no_auto_split) assign_default_splits(records);
        const auto bundle = prepare_bundle(taxonomy, records, min_count);
        bundle.save(ingest_out);
        json config = {{"taxonomy", ingest_taxonomy},  {"corpus", ingest_corpus},
                       {"out", ingest_out},            {"min_count", min_count},
                       {"auto_split", !no_auto_split}, {"seed", seed}};
        write_run_log(ingest_out, "ingest", config);
        std::printf("bundle: %zu documents, vocabulary %u (min count %u)\n",
                    bundle.documents.size(), bundle.vocab.size(), min_count);
        return 0;
    }

    if (train->parsed()) {
        const auto bundle = CorpusBundle::load(train_bundle);
        lm_config.vocab_size = bundle.vocab.size();
        lm_config.seed = seed;
        TrainTrace trace;
        const auto params = train_lm(lm_config, bundle.documents, &trace);
        save_checkpoint(train_out, params);
        for (std::size_t e = 0; e < trace.train_loss.size(); ++e) {
            if (e < trace.valid_loss.size()) {
                std::printf("epoch %zu train_loss %.6f valid_loss %.6f\n", e,
                            trace.train_loss[e], trace.valid_loss[e]);
            } else {
                std::printf("epoch %zu train_loss %.6f\n", e, trace.train_loss[e]);
            }
        }
        if (trace.early_stopped) std::printf("early stop after %u epochs\n", trace.epochs_run);
        json config = {{"bundle", train_bundle},
                       {"out", train_out},
                       {"context_window", lm_config.context_window},
                       {"embedding_dim", lm_config.embedding_dim},
                       {"hidden_dim", lm_config.hidden_dim},
                       {"vocab_size", lm_config.vocab_size},
                       {"learning_rate", lm_config.learning_rate},
                       {"epochs", lm_config.epochs},
                       {"batch_size", lm_config.batch_size},
                       {"seed", seed}};
        write_run_log(train_out, "train-lm", config);
        return 0;
    }

    if (build_ds->parsed()) {
        const auto bundle = CorpusBundle::load(bds_bundle);
        const auto params = load_checkpoint(bds_model);
        if (params.config.vocab_size != bundle.vocab.size()) {
            throw ConfigError("model vocabulary size does not match the bundle");
        }
        const auto docs = bundle.split_documents(parse_split(bds_split));
        const auto header = Datastore::build(params, docs, bundle.taxonomy_fp(),
                                             parse_distance(bds_distance), bds_out);
        json config = {{"bundle", bds_bundle}, {"model", bds_model}, {"out", bds_out},
                       {"distance", bds_distance}, {"split", bds_split}, {"seed", seed}};
        write_run_log(bds_out, "build-datastore", config);
        std::printf("datastore: %llu entries, dim %u\n",
                    static_cast<unsigned long long>(header.count), header.dim);
        return 0;
    }

    if (build_index->parsed()) {
        const auto store = Datastore::open(bi_store);
        auto index = build_ivf(store, bi_clusters, seed);
        if (bi_probe != 0) {
            if (bi_probe > index.n_clusters()) throw ConfigError("--default-probe too large");
            index.n_probe_default = bi_probe;
        }
        index.save(bi_out);
        json config = {{"datastore", bi_store},
                       {"out", bi_out},
                       {"clusters", bi_clusters},
                       {"default_probe", index.n_probe_default},
                       {"seed", seed}};
        write_run_log(bi_out, "build-ivf", config);
        std::printf("ivf: %u clusters over %llu entries\n", index.n_clusters(),
                    static_cast<unsigned long long>(index.entry_count));
        return 0;
    }

    if (train_loc->parsed()) {
        const auto bundle = CorpusBundle::load(tl_bundle);
        const auto params = load_checkpoint(tl_model);
        const auto store = Datastore::open(tl_store);
        if (bundle.taxonomy_fp() != store.header().taxonomy_fp) {
            throw ConfigError("datastore was built against a different taxonomy");
        }
        const auto features = LocalityFeatureSet::parse(tl_features);
        if (features.empty()) throw ConfigError("train-locality needs a non-empty feature set");
        tl_options.seed = seed;
        tl_options.metric =
            tl_metric.empty() ? store.header().distance : parse_distance(tl_metric);
        const auto sample = draw_annotated_sample(bundle.documents, tl_sample_size, seed);
        const auto result = train_locality_weights(store, params, sample, features, tl_options);
        save_weights(tl_out, result.weights);
        for (std::size_t e = 0; e < result.loss_trace.size(); ++e) {
            std::printf("epoch %zu loss %.6f\n", e, result.loss_trace[e]);
        }
        std::printf("samples used %zu skipped %zu\n", result.used_samples,
                    result.skipped_samples);
        json config = {{"bundle", tl_bundle},
                       {"model", tl_model},
                       {"datastore", tl_store},
                       {"out", tl_out},
                       {"features", features.to_string()},
                       {"k", tl_options.k},
                       {"sample_size", tl_sample_size},
                       {"lr", tl_options.learning_rate},
                       {"epochs", tl_options.epochs},
                       {"metric", distance_name(tl_options.metric)},
                       {"seed", seed}};
        write_run_log(tl_out, "train-locality", config);
        return 0;
    }

    if (eval->parsed()) {
        const auto artifacts = eval_flags.load(/*need_store=*/false);
        const auto docs = artifacts.bundle.split_documents(parse_split(eval_split));
        if (docs.empty()) throw DataError("no documents in split " + eval_split);

        json report = {{"schema_version", 1}, {"kind", "perplexity"}};
        json config = eval_flags.config_json();
        config["split"] = eval_split;
        config["restrict_style"] = eval_restrict;
        config["seed"] = seed;

        double ppl;
        if (artifacts.store.has_value()) {
            auto knn_config = eval_flags.knn_config(artifacts);
            if (!eval_restrict.empty()) {
                knn_config.style_restriction =
                    resolve_style(artifacts.bundle.taxonomy, eval_restrict);
            }
            const auto model =
                make_model(*artifacts.store, artifacts.params, eval_flags.weights(),
                           knn_config, artifacts.bundle.taxonomy,
                           artifacts.ivf ? &*artifacts.ivf : nullptr);
            const auto result = corpus_nll(model, docs);
            ppl = result.perplexity();
            report["tokens"] = result.tokens;
            report["fallbacks"] = result.fallbacks;
        } else {
            ppl = perplexity(artifacts.params, docs);
        }
        report["perplexity"] = json_ppl(ppl);
        report["config"] = config;
        std::printf("perplexity %s over split %s\n", format_double(ppl).c_str(),
                    eval_split.c_str());
        if (!eval_out.empty()) {
            EvalReport er;
            er.doc = report;
            er.save(eval_out);
            write_run_log(eval_out, "eval-ppl", config);
        }
        return 0;
    }

    if (ablate->parsed()) {
        const auto artifacts = ab_flags.load(/*need_store=*/true);
        ab_options.k = ab_flags.k;
        ab_options.seed = seed;
        if (!ab_grid.empty()) ab_options.lambda_grid = parse_grid(ab_grid);
        if (!ab_flags.metric.empty()) ab_options.metric = parse_distance(ab_flags.metric);
        if (!ab_rows.empty()) {
            ab_options.rows.clear();
            std::size_t start = 0;
            while (start <= ab_rows.size()) {
                std::size_t end = ab_rows.find(';', start);
                if (end == std::string::npos) end = ab_rows.size();
                ab_options.rows.push_back(
                    LocalityFeatureSet::parse(ab_rows.substr(start, end - start)));
                if (end == ab_rows.size()) break;
                start = end + 1;
            }
        }
        auto report = run_ablation(artifacts.bundle.taxonomy, artifacts.bundle,
                                   artifacts.params, *artifacts.store,
                                   artifacts.ivf ? &*artifacts.ivf : nullptr, ab_options);
        json config = ab_flags.config_json();
        config["seed"] = seed;
        config["sample_size"] = ab_options.sample_size;
        report.doc["cli_config"] = config;
        report.save(ab_out);
        write_run_log(ab_out, "ablate", config);
        for (const auto& row : report.doc["rows"]) {
            std::printf("%-24s lambda %.2f test_ppl %s\n",
                        row["features"].get<std::string>().c_str(),
                        row["lambda"].get<double>(), row["test_perplexity"].dump().c_str());
        }
        return 0;
    }

    if (heatmap->parsed()) {
        const auto bundle = CorpusBundle::load(hm_bundle);
        const auto params = load_checkpoint(hm_model);
        if (params.config.vocab_size != bundle.vocab.size()) {
            throw ConfigError("model vocabulary size does not match the bundle");
        }
        std::optional<std::vector<std::uint16_t>> subset;
        if (hm_present_only) {
            std::vector<bool> seen(bundle.taxonomy.style_count(), false);
            for (const auto& d : bundle.documents) seen[d.locality.style_id] = true;
            subset.emplace();
            for (std::size_t s = 0; s < seen.size(); ++s) {
                if (seen[s]) subset->push_back(static_cast<std::uint16_t>(s));
            }
        }
        const auto matrix =
            style_similarity_heatmap(params, bundle.documents, bundle.taxonomy, subset);
        atomic_write_file(hm_out, matrix.to_csv());
        json config = {{"bundle", hm_bundle},
                       {"model", hm_model},
                       {"out", hm_out},
                       {"present_only", hm_present_only},
                       {"seed", seed}};
        write_run_log(hm_out, "heatmap", config);
        if (!hm_json.empty()) {
            EvalReport er;
            er.doc = {{"schema_version", 1},
                      {"kind", "heatmap"},
                      {"styles", matrix.styles},
                      {"values", matrix.values},
                      {"config", config}};
            er.save(hm_json);
        }
        std::printf("heatmap over %zu styles -> %s\n", matrix.styles.size(), hm_out.c_str());
        return 0;
    }

    if (gen->parsed()) {
        const auto artifacts = gen_flags.load(/*need_store=*/true);
        const auto& taxonomy = artifacts.bundle.taxonomy;
        const std::uint16_t style = resolve_style(taxonomy, gen_style);

        auto weights = gen_flags.weights();
        if (gen_restrict) weights = force_style_restriction(weights);
        const auto knn_config = gen_flags.knn_config(artifacts);
        const auto model = make_model(*artifacts.store, artifacts.params, weights, knn_config,
                                      taxonomy, artifacts.ivf ? &*artifacts.ivf : nullptr);

        std::vector<std::vector<std::uint32_t>> prompt_ids;
        std::vector<std::string> prompt_texts;
        if (!gen_prompts_file.empty()) {
            for (auto& line : read_lines(gen_prompts_file)) gen_prompts.push_back(line);
        }
        if (!gen_prompts.empty()) {
            for (const auto& text : gen_prompts) {
                prompt_ids.push_back(tokenize(text, artifacts.bundle.vocab));
                prompt_texts.push_back(text);
            }
        } else {
            const auto test_docs = artifacts.bundle.split_documents(Split::test);
            for (const auto& p : sample_prompts(test_docs, gen_n_prompts, seed, style)) {
                prompt_texts.push_back(artifacts.bundle.vocab.decode(p.tokens));
                prompt_ids.push_back(p.tokens);
            }
        }

        const bool greedy = gen_mode == "greedy";
        if (!greedy && gen_mode != "sample") throw ConfigError("--mode must be greedy|sample");

        std::string out_text;
        for (std::size_t i = 0; i < prompt_ids.size(); ++i) {
            GenerationRequest req;
            req.prompt = prompt_ids[i];
            req.target_locality.style_id = style;
            req.target_locality.category_id = taxonomy.category_of_style(style);
            req.max_new_tokens = gen_max_new;
            req.greedy = greedy;
            req.temperature = gen_temperature;
            req.top_k_tokens = gen_top_k;
            req.seed = splitmix64(seed + i);
            const auto result = generate(model, req);

            json steps = json::array();
            for (const auto& s : result.steps) {
                steps.push_back({{"token", artifacts.bundle.vocab.token(s.token)},
                                 {"same_style_fraction", s.same_style_fraction},
                                 {"in_neighbors", s.token_in_neighbors},
                                 {"fallback", s.fallback},
                                 {"style_counts", s.style_counts}});
            }
            json line = {{"prompt", prompt_texts[i]},
                         {"target_style", gen_style},
                         {"continuation", artifacts.bundle.vocab.decode(result.tokens)},
                         {"style_match_score", style_match_score(result.steps, style)},
                         {"steps", steps}};
            out_text += line.dump();
            out_text += '\n';
        }
        atomic_write_file(gen_out, out_text);
        json config = gen_flags.config_json();
        config["style"] = gen_style;
        config["mode"] = gen_mode;
        config["max_new_tokens"] = gen_max_new;
        config["restrict_style"] = gen_restrict;
        config["seed"] = seed;
        write_run_log(gen_out, "generate", config);
        std::printf("%zu completions -> %s\n", prompt_ids.size(), gen_out.c_str());
        return 0;
    }

    if (cmp->parsed()) {
        const auto artifacts = cmp_flags.load(/*need_store=*/true);
        const auto& taxonomy = artifacts.bundle.taxonomy;

        auto weights_a = cmp_flags.weights();
        if (cmp_restrict_a) weights_a = force_style_restriction(weights_a);
        auto weights_b = cmp_weights_b.empty()
                             ? LocalityWeights::identity(LocalityFeatureSet::none())
                             : load_weights(cmp_weights_b);
        if (cmp_restrict_b) weights_b = force_style_restriction(weights_b);

        auto config_a = cmp_flags.knn_config(artifacts);
        auto config_b = config_a;
        if (cmp_lambda_b >= 0.0) config_b.lambda = cmp_lambda_b;

        const auto* ivf = artifacts.ivf ? &*artifacts.ivf : nullptr;
        const auto model_a =
            make_model(*artifacts.store, artifacts.params, weights_a, config_a, taxonomy, ivf);
        const auto model_b =
            make_model(*artifacts.store, artifacts.params, weights_b, config_b, taxonomy, ivf);

        std::vector<ComparePrompt> prompts;
        std::optional<std::uint16_t> force_style;
        if (!cmp_style.empty()) force_style = resolve_style(taxonomy, cmp_style);
        if (!cmp_prompts_file.empty()) {
            for (const auto& line : read_lines(cmp_prompts_file)) {
                ComparePrompt p;
                p.tokens = tokenize(line, artifacts.bundle.vocab);
                p.target_style = force_style.value_or(0);
                prompts.push_back(std::move(p));
            }
        } else {
            const auto test_docs = artifacts.bundle.split_documents(Split::test);
            prompts = sample_prompts(test_docs, cmp_n_prompts, seed, force_style);
        }

        CompareSettings settings;
        settings.max_new_tokens = cmp_max_new;
        settings.greedy = cmp_mode == "greedy";
        if (!settings.greedy && cmp_mode != "sample") {
            throw ConfigError("--mode must be greedy|sample");
        }
        settings.temperature = cmp_temperature;
        settings.top_k_tokens = cmp_top_k;
        settings.seed = seed;

        const auto report = compare_models(model_a, model_b, artifacts.params, prompts,
                                           artifacts.bundle.vocab, taxonomy, settings);
        atomic_write_file(cmp_out, report.to_jsonl());
        json config = cmp_flags.config_json();
        config["weights_b"] = cmp_weights_b;
        config["lambda_b"] = cmp_lambda_b;
        config["restrict_a"] = cmp_restrict_a;
        config["restrict_b"] = cmp_restrict_b;
        config["style"] = cmp_style;
        config["n_prompts"] = cmp_n_prompts;
        config["mode"] = cmp_mode;
        config["seed"] = seed;
        write_run_log(cmp_out, "compare", config);
        if (!cmp_summary.empty()) {
            json summary = report.summary();
            summary["config"] = config;
            EvalReport er;
            er.doc = summary;
            er.save(cmp_summary);
        }
        std::printf("style wins A %zu / B %zu / ties %zu; fluency wins A %zu / B %zu\n",
                    report.style_wins_a, report.style_wins_b, report.style_ties,
                    report.nll_wins_a, report.nll_wins_b);
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error category=config message=\"%s\"\n", e.what());
    } catch (const DataError& e) {
        std::fprintf(stderr, "error category=data message=\"%s\"\n", e.what());
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error category=numeric message=\"%s\"\n", e.what());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error category=internal message=\"%s\"\n", e.what());
    }
    return 1;
}
