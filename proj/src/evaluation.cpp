#include "sknn/evaluation.hpp"

#include "sknn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace sknn {

using nlohmann::json;

std::vector<LocalityFeatureSet> default_ablation_rows() {
    using F = LocalityFeatureSet;
    return {
        F::none(),
        F::of(true, false, false),  // style
        F::of(false, false, true),  // category
        F::of(false, true, false),  // source
        F::of(true, false, true),   // style + category
        F::of(false, true, true),   // source + category
        F::of(true, true, false),   // style + source
    };
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(static_cast<double>(i) * 0.05);
    grid.back() = 1.0;
    return grid;
}

// ---------------------------------------------------------------------------
// EvalReport
// ---------------------------------------------------------------------------

json json_ppl(double value) {
    if (std::isfinite(value)) return value;
    return "inf";
}

std::string EvalReport::to_text() const { return doc.dump(2) + "\n"; }

EvalReport EvalReport::from_text(std::string_view text) {
    EvalReport r;
    try {
        r.doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("invalid report JSON: ") + e.what());
    }
    if (!r.doc.is_object() || !r.doc.contains("schema_version")) {
        throw DataError("report is missing schema_version");
    }
    // Positivity check on every perplexity the report carries.
    auto check = [](const json& v) {
        if (v.is_number() && !(v.get<double>() > 0.0)) {
            throw DataError("report contains a non-positive perplexity");
        }
    };
    if (r.doc.contains("rows")) {
        for (const auto& row : r.doc["rows"]) {
            if (row.contains("test_perplexity")) check(row["test_perplexity"]);
        }
    }
    if (r.doc.contains("perplexity")) check(r.doc["perplexity"]);
    return r;
}

void EvalReport::save(const std::filesystem::path& path) const {
    atomic_write_file(path, to_text());
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
    return from_text(read_file(path));
}

// ---------------------------------------------------------------------------
// Lambda search
// ---------------------------------------------------------------------------

namespace {

struct ScoredPosition {
    double p_lm = 0.0;  // base LM probability of the target
    double p_knn = 0.0; // kNN probability of the target (0 unless retrievable)
    bool fallback = false;
};

// One retrieval pass; mixture probabilities for any lambda follow from the
// cached pair through the same interpolate() the live model uses.
std::vector<ScoredPosition> score_positions(const KnnLmModel& model,
                                            std::span<const Document> docs, unsigned threads,
                                            std::size_t* total_fallbacks) {
    std::vector<std::size_t> offsets(docs.size() + 1, 0);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        offsets[i + 1] = offsets[i] + docs[i].tokens.size();
    }
    std::vector<ScoredPosition> scored(offsets.back());

    parallel_for(docs.size(), threads, [&](std::size_t di) {
        const auto& doc = docs[di];
        for (std::size_t pos = 0; pos < doc.tokens.size(); ++pos) {
            ScoredPosition sp;
            const std::uint32_t target = doc.tokens[pos];
            const auto ctx = std::span(doc.tokens.data(), pos);
            sp.p_lm = lm_distribution(*model.params, ctx)[target];

            const auto query = to_f32(encode(*model.params, ctx));
            std::optional<std::uint16_t> style = model.config.style_restriction;
            if (!style && model.weights.mask_style_mismatch) style = doc.locality.style_id;
            std::vector<Neighbor> neighbors;
            if (model.config.mode == RetrievalMode::ivf) {
                neighbors = knn_approx(*model.store, *model.ivf, query, model.config.k,
                                       model.config.n_probe, style);
            } else {
                neighbors = knn_exact(*model.store, query, model.config.k, style);
            }
            if (neighbors.empty()) {
                sp.fallback = true;
            } else {
                sp.p_knn = knn_locality_distribution(neighbors, doc.locality, model.weights,
                                                     model.params->config.vocab_size,
                                                     model.config.metric)[target];
            }
            scored[offsets[di] + pos] = sp;
        }
    });

    if (total_fallbacks != nullptr) {
        *total_fallbacks = static_cast<std::size_t>(
            std::count_if(scored.begin(), scored.end(),
                          [](const ScoredPosition& sp) { return sp.fallback; }));
    }
    return scored;
}

double ppl_at_lambda(std::span<const ScoredPosition> scored, double lambda) {
    double nll = 0.0;
    for (const auto& sp : scored) {
        const double p = sp.fallback ? sp.p_lm : interpolate(lambda, sp.p_knn, sp.p_lm);
        nll += -std::log(p);
    }
    return std::exp(nll / static_cast<double>(scored.size()));
}

} // namespace

LambdaSearchResult grid_search_lambda(const KnnLmModel& model, std::span<const Document> docs,
                                      std::span<const double> grid, unsigned threads) {
    if (grid.empty()) throw ConfigError("lambda grid is empty");
    for (double l : grid) {
        if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambda grid values must be in [0, 1]");
    }
    if (docs.empty()) throw DataError("grid_search_lambda: no documents");

    LambdaSearchResult result;
    const auto scored = score_positions(model, docs, threads, &result.fallbacks);

    double best_ppl = std::numeric_limits<double>::infinity();
    result.best_lambda = grid[0];
    for (double lambda : grid) {
        const double ppl = ppl_at_lambda(scored, lambda);
        result.curve.emplace_back(lambda, ppl);
        if (ppl < best_ppl || (ppl == best_ppl && lambda < result.best_lambda)) {
            best_ppl = ppl;
            result.best_lambda = lambda;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

EvalReport run_ablation(const StyleTaxonomy& taxonomy, const CorpusBundle& bundle,
                        const LMParameters& params, const Datastore& store,
                        const IvfIndex* ivf, const AblationOptions& options) {
    const auto valid_docs = bundle.split_documents(Split::valid);
    const auto test_docs = bundle.split_documents(Split::test);
    if (valid_docs.empty()) throw DataError("ablation needs a valid split");
    if (test_docs.empty()) throw DataError("ablation needs a test split");

    const DistanceKind metric = options.metric.value_or(store.header().distance);
    const auto sample =
        draw_annotated_sample(bundle.documents, options.sample_size, options.seed);

    KnnLmConfig base_config;
    base_config.k = options.k;
    base_config.metric = metric;
    if (ivf != nullptr) {
        base_config.mode = RetrievalMode::ivf;
        base_config.n_probe = ivf->n_probe_default;
    }

    EvalReport report;
    report.doc["schema_version"] = 1;
    report.doc["kind"] = "ablation";
    report.doc["config"] = {
        {"k", options.k},
        {"lambda_grid", options.lambda_grid},
        {"sample_size", options.sample_size},
        {"seed", options.seed},
        {"locality_lr", options.locality_lr},
        {"locality_epochs", options.locality_epochs},
        {"metric", distance_name(metric)},
        {"retrieval", ivf != nullptr ? "ivf" : "exact"},
    };
    report.doc["base_lm_test_perplexity"] = json_ppl(perplexity(params, test_docs));

    json rows = json::array();
    for (const auto& features : options.rows) {
        json row;
        row["features"] = features.to_string();

        LocalityWeights weights = LocalityWeights::identity(features);
        if (!features.empty()) {
            LocalityTrainOptions topt;
            topt.k = options.k;
            topt.learning_rate = options.locality_lr;
            topt.epochs = options.locality_epochs;
            topt.seed = options.seed;
            topt.metric = metric;
            topt.threads = options.threads;
            auto trained = train_locality_weights(store, params, sample, features, topt);
            weights = trained.weights;
            row["used_samples"] = trained.used_samples;
            row["skipped_samples"] = trained.skipped_samples;
            row["final_train_loss"] = json_ppl(trained.loss_trace.empty()
                                                   ? std::numeric_limits<double>::quiet_NaN()
                                                   : trained.loss_trace.back());
        }
        json theta = json::object();
        for (std::size_t i = 0; i < weights.theta.size(); ++i) {
            std::string pattern(std::max(1u, features.level_count()), '0');
            for (unsigned b = 0; b < pattern.size(); ++b) {
                if ((i >> b) & 1u) pattern[pattern.size() - 1 - b] = '1';
            }
            theta["a_" + pattern] = weights.theta[i];
        }
        row["theta"] = theta;

        auto model = make_model(store, params, weights, base_config, taxonomy, ivf);
        auto search = grid_search_lambda(model, valid_docs, options.lambda_grid,
                                         options.threads);
        row["lambda"] = search.best_lambda;
        json curve = json::array();
        for (auto [lambda, ppl] : search.curve) {
            curve.push_back({{"lambda", lambda}, {"perplexity", json_ppl(ppl)}});
        }
        row["valid_curve"] = curve;
        row["valid_fallbacks"] = search.fallbacks;

        model.config.lambda = search.best_lambda;
        const auto test = corpus_nll(model, test_docs, options.threads);
        row["test_perplexity"] = json_ppl(test.perplexity());
        row["test_fallbacks"] = test.fallbacks;
        row["test_tokens"] = test.tokens;
        rows.push_back(std::move(row));
    }
    report.doc["rows"] = std::move(rows);
    return report;
}

// ---------------------------------------------------------------------------
// Style-control proxies
// ---------------------------------------------------------------------------

double style_match_score(std::span<const StepDiagnostics> steps, std::uint16_t target_style) {
    if (steps.empty()) throw DataError("style_match_score over empty diagnostics");
    double total = 0.0;
    for (const auto& step : steps) {
        std::uint64_t retrieved = 0;
        for (auto c : step.style_counts) retrieved += c;
        if (retrieved == 0) continue; // contributes zero
        const std::uint64_t same =
            target_style < step.style_counts.size() ? step.style_counts[target_style] : 0;
        total += static_cast<double>(same) / static_cast<double>(retrieved);
    }
    return total / static_cast<double>(steps.size());
}

StyleSimilarityMatrix style_similarity_heatmap(
    const LMParameters& params, std::span<const Document> docs, const StyleTaxonomy& taxonomy,
    const std::optional<std::vector<std::uint16_t>>& style_subset) {
    std::vector<std::uint16_t> styles;
    if (style_subset.has_value()) {
        styles = *style_subset;
    } else {
        for (std::size_t s = 0; s < taxonomy.style_count(); ++s) {
            styles.push_back(static_cast<std::uint16_t>(s));
        }
    }
    if (styles.empty()) throw ConfigError("heatmap needs at least one style");

    const std::uint32_t d = params.config.hidden_dim;
    std::vector<std::vector<double>> means(styles.size(), std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(styles.size(), 0);

    for (std::size_t si = 0; si < styles.size(); ++si) {
        for (const auto& doc : docs) {
            if (doc.locality.style_id != styles[si]) continue;
            const auto h = encode(params, doc.tokens);
            kernels::axpy_f64(1.0, h.data(), means[si].data(), d);
            ++counts[si];
        }
        if (counts[si] == 0) {
            throw DataError("style '" + taxonomy.style_name(styles[si]) +
                            "' has no documents");
        }
        const double inv = 1.0 / static_cast<double>(counts[si]);
        for (auto& v : means[si]) v *= inv;
    }

    StyleSimilarityMatrix m;
    for (auto s : styles) m.styles.push_back(taxonomy.style_name(s));
    const std::size_t n = styles.size();
    m.values.assign(n * n, 1.0); // diagonal is 1 by definition
    for (std::size_t i = 0; i < n; ++i) {
        const double norm_i = std::sqrt(kernels::dot_f64(means[i].data(), means[i].data(), d));
        for (std::size_t j = i + 1; j < n; ++j) {
            const double norm_j =
                std::sqrt(kernels::dot_f64(means[j].data(), means[j].data(), d));
            double cos = 0.0;
            if (norm_i > 0.0 && norm_j > 0.0) {
                cos = kernels::dot_f64(means[i].data(), means[j].data(), d) / (norm_i * norm_j);
                cos = std::clamp(cos, -1.0, 1.0);
            }
            const double scaled = (1.0 + cos) / 2.0;
            m.values[i * n + j] = scaled;
            m.values[j * n + i] = scaled; // mirrored, symmetric by construction
        }
    }
    return m;
}

std::string StyleSimilarityMatrix::to_csv() const {
    std::string out = "style";
    for (const auto& s : styles) {
        out += ',';
        out += s;
    }
    out += '\n';
    const std::size_t n = styles.size();
    for (std::size_t i = 0; i < n; ++i) {
        out += styles[i];
        for (std::size_t j = 0; j < n; ++j) {
            out += ',';
            out += format_double(values[i * n + j]);
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

std::vector<ComparePrompt> sample_prompts(std::span<const Document> docs, std::size_t n,
                                          std::uint64_t seed,
                                          std::optional<std::uint16_t> force_style) {
    if (docs.empty()) throw DataError("sample_prompts: no documents");
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<ComparePrompt> prompts;
    prompts.reserve(n);
    for (std::size_t i = 0; i < order.size() && prompts.size() < n; ++i) {
        const auto& doc = docs[order[i]];
        // first half of the document, EOS excluded from the halving
        const std::size_t body = doc.tokens.size() > 1 ? doc.tokens.size() - 1 : 1;
        const std::size_t half = std::max<std::size_t>(1, body / 2);
        ComparePrompt p;
        p.tokens.assign(doc.tokens.begin(), doc.tokens.begin() + half);
        p.target_style = force_style.value_or(doc.locality.style_id);
        prompts.push_back(std::move(p));
    }
    return prompts;
}

namespace {

double continuation_ref_nll(const LMParameters& ref, std::span<const std::uint32_t> prompt,
                            std::span<const std::uint32_t> continuation) {
    if (continuation.empty()) return 0.0;
    std::vector<std::uint32_t> ctx(prompt.begin(), prompt.end());
    double nll = 0.0;
    for (std::uint32_t token : continuation) {
        nll += -std::log(lm_distribution(ref, ctx)[token]);
        ctx.push_back(token);
    }
    return nll / static_cast<double>(continuation.size());
}

} // namespace

CompareReport compare_models(const KnnLmModel& a, const KnnLmModel& b,
                             const LMParameters& fluency_ref,
                             std::span<const ComparePrompt> prompts, const Vocabulary& vocab,
                             const StyleTaxonomy& taxonomy, const CompareSettings& settings) {
    const std::uint32_t v = vocab.size();
    if (a.params->config.vocab_size != v || b.params->config.vocab_size != v ||
        fluency_ref.config.vocab_size != v) {
        throw ConfigError("compare_models: models do not share a vocabulary");
    }

    struct Outcome {
        json row;
        double style_a = 0.0, style_b = 0.0;
        double nll_a = 0.0, nll_b = 0.0;
    };
    std::vector<Outcome> outcomes(prompts.size());

    parallel_for(prompts.size(), settings.threads, [&](std::size_t i) {
        const auto& prompt = prompts[i];
        GenerationRequest req;
        req.prompt = prompt.tokens;
        req.target_locality.style_id = prompt.target_style;
        req.target_locality.category_id = taxonomy.category_of_style(prompt.target_style);
        req.max_new_tokens = settings.max_new_tokens;
        req.greedy = settings.greedy;
        req.temperature = settings.temperature;
        req.top_k_tokens = settings.top_k_tokens;
        req.seed = splitmix64(settings.seed + i);

        const auto gen_a = generate(a, req);
        const auto gen_b = generate(b, req);

        Outcome& out = outcomes[i];
        out.style_a = style_match_score(gen_a.steps, prompt.target_style);
        out.style_b = style_match_score(gen_b.steps, prompt.target_style);
        out.nll_a = continuation_ref_nll(fluency_ref, prompt.tokens, gen_a.tokens);
        out.nll_b = continuation_ref_nll(fluency_ref, prompt.tokens, gen_b.tokens);

        out.row = {
            {"prompt", vocab.decode(prompt.tokens)},
            {"target_style", taxonomy.style_name(prompt.target_style)},
            {"a",
             {{"continuation", vocab.decode(gen_a.tokens)},
              {"style_score", out.style_a},
              {"ref_nll", json_ppl(out.nll_a)}}},
            {"b",
             {{"continuation", vocab.decode(gen_b.tokens)},
              {"style_score", out.style_b},
              {"ref_nll", json_ppl(out.nll_b)}}},
        };
    });

    CompareReport report;
    report.prompts = prompts.size();
    for (auto& out : outcomes) {
        report.rows.push_back(std::move(out.row));
        if (out.style_a > out.style_b) {
            ++report.style_wins_a;
        } else if (out.style_b > out.style_a) {
            ++report.style_wins_b;
        } else {
            ++report.style_ties;
        }
        if (out.nll_a < out.nll_b) {
            ++report.nll_wins_a;
        } else if (out.nll_b < out.nll_a) {
            ++report.nll_wins_b;
        } else {
            ++report.nll_ties;
        }
        report.mean_style_delta += out.style_a - out.style_b;
        report.mean_nll_delta += out.nll_a - out.nll_b;
    }
    if (!prompts.empty()) {
        report.mean_style_delta /= static_cast<double>(prompts.size());
        report.mean_nll_delta /= static_cast<double>(prompts.size());
    }
    return report;
}

std::string CompareReport::to_jsonl() const {
    std::string out;
    for (const auto& row : rows) {
        out += row.dump();
        out += '\n';
    }
    return out;
}

json CompareReport::summary() const {
    return {
        {"schema_version", 1},
        {"kind", "comparison"},
        {"prompts", prompts},
        {"style", {{"wins_a", style_wins_a}, {"wins_b", style_wins_b}, {"ties", style_ties}}},
        {"fluency", {{"wins_a", nll_wins_a}, {"wins_b", nll_wins_b}, {"ties", nll_ties}}},
        {"mean_style_delta", mean_style_delta},
        {"mean_ref_nll_delta", mean_nll_delta},
    };
}

} // namespace sknn
