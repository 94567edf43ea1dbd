#include "sknn/locality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace sknn {

// ---------------------------------------------------------------------------
// Feature sets and combinations
// ---------------------------------------------------------------------------

LocalityFeatureSet LocalityFeatureSet::of(bool style, bool source, bool category) {
    unsigned mask = 0;
    if (style) mask |= 1u << static_cast<unsigned>(Feature::style);
    if (source) mask |= 1u << static_cast<unsigned>(Feature::source);
    if (category) mask |= 1u << static_cast<unsigned>(Feature::category);
    return LocalityFeatureSet(mask);
}

LocalityFeatureSet LocalityFeatureSet::parse(std::string_view text) {
    if (text.empty() || text == "none") return none();
    bool style = false, source = false, category = false;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view name = text.substr(start, end - start);
        if (name == "style") {
            style = true;
        } else if (name == "source") {
            source = true;
        } else if (name == "category") {
            category = true;
        } else if (!name.empty()) {
            throw ConfigError("unknown locality feature: " + std::string(name));
        }
        if (end == text.size()) break;
        start = end + 1;
    }
    return of(style, source, category);
}

std::string LocalityFeatureSet::to_string() const {
    if (empty()) return "none";
    std::string s;
    auto add = [&s](const char* name) {
        if (!s.empty()) s.push_back(',');
        s += name;
    };
    if (has(Feature::style)) add("style");
    if (has(Feature::source)) add("source");
    if (has(Feature::category)) add("category");
    return s;
}

unsigned LocalityFeatureSet::level_count() const {
    unsigned n = 0;
    for (unsigned b = 0; b < 3; ++b) n += (mask_ >> b) & 1u;
    return n;
}

std::size_t combination_index(const LocalityDescriptor& query,
                              const LocalityDescriptor& neighbor,
                              LocalityFeatureSet features) {
    std::size_t idx = 0;
    unsigned bit = 0;
    if (features.has(Feature::style)) {
        idx |= static_cast<std::size_t>(query.style_id == neighbor.style_id) << bit++;
    }
    if (features.has(Feature::source)) {
        idx |= static_cast<std::size_t>(query.source_id == neighbor.source_id) << bit++;
    }
    if (features.has(Feature::category)) {
        idx |= static_cast<std::size_t>(query.category_id == neighbor.category_id) << bit++;
    }
    return idx;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

LocalityWeights LocalityWeights::identity(LocalityFeatureSet features) {
    LocalityWeights w;
    w.features = features;
    w.theta.assign(features.combination_count(), 1.0);
    return w;
}

void LocalityWeights::validate() const {
    if (theta.size() != features.combination_count()) {
        throw ConfigError("locality weights size does not match the feature set");
    }
    for (double v : theta) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ConfigError("locality weights must be finite and non-negative");
        }
    }
    if (mask_style_mismatch && !features.has(Feature::style)) {
        throw ConfigError("style masking requires the style feature");
    }
}

double reweighted_distance(double raw_distance, std::size_t combo,
                           const LocalityWeights& weights) {
    if (combo >= weights.theta.size()) throw ConfigError("combination index out of range");
    return weights.theta[combo] * raw_distance;
}

LocalityWeights force_style_restriction(const LocalityWeights& weights_template) {
    if (!weights_template.features.has(Feature::style)) {
        throw ConfigError("force_style_restriction requires the style feature");
    }
    LocalityWeights w = weights_template;
    w.mask_style_mismatch = true;
    return w;
}

// ---------------------------------------------------------------------------
// Retrieval distribution
// ---------------------------------------------------------------------------

namespace {

inline double metric_distance(double squared, DistanceKind metric) {
    return metric == DistanceKind::l2 ? std::sqrt(squared) : squared;
}

} // namespace

std::vector<double> knn_locality_distribution(std::span<const Neighbor> neighbors,
                                              const LocalityDescriptor& query_loc,
                                              const LocalityWeights& weights,
                                              std::uint32_t vocab_size, DistanceKind metric) {
    struct Scored {
        double neg_dist;
        std::uint32_t value;
    };
    std::vector<Scored> scored;
    scored.reserve(neighbors.size());
    double max_neg = -std::numeric_limits<double>::infinity();
    for (const auto& n : neighbors) {
        if (weights.mask_style_mismatch && n.locality.style_id != query_loc.style_id) continue;
        const std::size_t combo = combination_index(query_loc, n.locality, weights.features);
        const double g = reweighted_distance(metric_distance(n.distance, metric), combo, weights);
        scored.push_back({-g, n.value});
        max_neg = std::max(max_neg, -g);
    }
    if (scored.empty()) {
        throw DataError("knn distribution over an empty neighbor set");
    }

    std::vector<double> probs(vocab_size, 0.0);
    double z = 0.0;
    for (const auto& s : scored) {
        if (s.value >= vocab_size) throw DataError("neighbor value outside the vocabulary");
        const double w = std::exp(s.neg_dist - max_neg);
        probs[s.value] += w;
        z += w;
    }
    for (auto& p : probs) p /= z;
    return probs;
}

// ---------------------------------------------------------------------------
// Annotated samples and caching
// ---------------------------------------------------------------------------

AnnotatedSample draw_annotated_sample(std::span<const Document> docs, std::size_t sample_size,
                                      std::uint64_t seed) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> positions; // (doc, pos)
    for (std::uint32_t d = 0; d < docs.size(); ++d) {
        if (docs[d].split != Split::train) continue;
        for (std::uint32_t p = 0; p < docs[d].tokens.size(); ++p) positions.push_back({d, p});
    }
    if (positions.empty()) throw DataError("no training positions to sample from");

    std::mt19937_64 rng(seed);
    std::shuffle(positions.begin(), positions.end(), rng);
    if (sample_size < positions.size()) positions.resize(sample_size);

    AnnotatedSample sample;
    sample.items.reserve(positions.size());
    for (auto [d, p] : positions) {
        AnnotatedSample::Item item;
        item.context.assign(docs[d].tokens.begin(), docs[d].tokens.begin() + p);
        item.target = docs[d].tokens[p];
        item.locality = docs[d].locality;
        sample.items.push_back(std::move(item));
    }
    return sample;
}

CachedSample cache_sample(const Datastore& store, const LMParameters& params,
                          const AnnotatedSample::Item& item, LocalityFeatureSet features,
                          std::size_t k, DistanceKind metric) {
    const auto query = to_f32(encode(params, item.context));
    const auto neighbors = knn_exact(store, query, k);

    CachedSample cached;
    cached.target = item.target;
    cached.neighbors.reserve(neighbors.size());
    for (const auto& n : neighbors) {
        CachedSample::CachedNeighbor cn;
        cn.distance = metric_distance(n.distance, metric);
        cn.combo = static_cast<std::uint32_t>(combination_index(item.locality, n.locality, features));
        cn.value = n.value;
        cached.neighbors.push_back(cn);
        if (n.value == item.target) cached.target_retrievable = true;
    }
    return cached;
}

// ---------------------------------------------------------------------------
// Loss and training
// ---------------------------------------------------------------------------

double locality_loss_and_grad(std::span<const CachedSample> samples,
                              const LocalityWeights& weights, std::span<double> grad) {
    if (grad.size() != weights.theta.size()) throw ConfigError("gradient size mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);

    double total = 0.0;
    std::size_t used = 0;
    std::vector<double> expw;
    std::vector<double> combo_target(weights.theta.size());
    std::vector<double> combo_all(weights.theta.size());

    for (const auto& s : samples) {
        if (!s.target_retrievable || s.neighbors.empty()) continue;
        ++used;

        double max_neg = -std::numeric_limits<double>::infinity();
        for (const auto& n : s.neighbors) {
            max_neg = std::max(max_neg, -weights.theta[n.combo] * n.distance);
        }
        expw.resize(s.neighbors.size());
        double z = 0.0, a = 0.0;
        std::fill(combo_target.begin(), combo_target.end(), 0.0);
        std::fill(combo_all.begin(), combo_all.end(), 0.0);
        for (std::size_t i = 0; i < s.neighbors.size(); ++i) {
            const auto& n = s.neighbors[i];
            const double w = std::exp(-weights.theta[n.combo] * n.distance - max_neg);
            expw[i] = w;
            z += w;
            combo_all[n.combo] += n.distance * w;
            if (n.value == s.target) {
                a += w;
                combo_target[n.combo] += n.distance * w;
            }
        }
        total += std::log(z) - std::log(a);
        // d/d theta_c of (log Z - log A) = sum_{target,c} d*w/A - sum_c d*w/Z
        for (std::size_t c = 0; c < grad.size(); ++c) {
            grad[c] += combo_target[c] / a - combo_all[c] / z;
        }
    }
    if (used == 0) throw DataError("no usable samples: target never retrieved");
    const double inv = 1.0 / static_cast<double>(used);
    for (auto& g : grad) g *= inv;
    return total * inv;
}

LocalityTrainResult train_locality_weights(const Datastore& store, const LMParameters& params,
                                           const AnnotatedSample& sample,
                                           LocalityFeatureSet features,
                                           const LocalityTrainOptions& options) {
    if (options.k < 1) throw ConfigError("train_locality_weights: k must be >= 1");
    if (sample.items.empty()) throw DataError("train_locality_weights: empty sample");

    // Retrieval pass, parallel over samples, collected in sample order.
    std::vector<CachedSample> cached(sample.items.size());
    parallel_for(sample.items.size(), options.threads, [&](std::size_t i) {
        cached[i] = cache_sample(store, params, sample.items[i], features, options.k,
                                 options.metric);
    });

    LocalityTrainResult result;
    result.weights = LocalityWeights::identity(features);
    for (const auto& c : cached) {
        if (c.target_retrievable) {
            ++result.used_samples;
        } else {
            ++result.skipped_samples;
        }
    }
    if (result.used_samples == 0) {
        throw DataError("train_locality_weights: target token never among the k neighbors");
    }

    std::vector<double> grad(result.weights.theta.size());
    for (std::uint32_t epoch = 0; epoch < options.epochs; ++epoch) {
        const double loss = locality_loss_and_grad(cached, result.weights, grad);
        if (!std::isfinite(loss)) {
            throw NumericError("locality weight training diverged at epoch " +
                               std::to_string(epoch));
        }
        result.loss_trace.push_back(loss);
        for (std::size_t c = 0; c < grad.size(); ++c) {
            double t = result.weights.theta[c] - options.learning_rate * grad[c];
            result.weights.theta[c] = std::max(0.0, t); // non-negativity projection
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Weights file
// ---------------------------------------------------------------------------

namespace {

std::string bit_pattern(std::size_t index, unsigned levels) {
    const unsigned width = std::max(1u, levels);
    std::string s(width, '0');
    for (unsigned b = 0; b < width; ++b) {
        if ((index >> b) & 1u) s[width - 1 - b] = '1';
    }
    return s;
}

} // namespace

std::string serialize_weights(const LocalityWeights& weights) {
    std::ostringstream out;
    out << "feature_set: " << weights.features.to_string() << "\n";
    out << "mask: " << (weights.mask_style_mismatch ? "style" : "none") << "\n";
    for (std::size_t i = 0; i < weights.theta.size(); ++i) {
        out << "a_" << bit_pattern(i, weights.features.level_count()) << " = "
            << format_double(weights.theta[i]) << "\n";
    }
    return out.str();
}

LocalityWeights parse_weights(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;

    auto next_line = [&](const char* what) -> std::string {
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) return line;
        }
        throw DataError(std::string("weights file: missing ") + what);
    };

    auto header = next_line("feature_set line");
    if (header.rfind("feature_set:", 0) != 0) {
        throw DataError("weights file: expected feature_set line");
    }
    std::string features_text = header.substr(sizeof("feature_set:") - 1);
    features_text.erase(0, features_text.find_first_not_of(" \t"));
    while (!features_text.empty() && (features_text.back() == '\r' || features_text.back() == ' ')) {
        features_text.pop_back();
    }

    LocalityWeights w;
    w.features = LocalityFeatureSet::parse(features_text);
    w.theta.assign(w.features.combination_count(), 1.0);

    auto mask_line = next_line("mask line");
    if (mask_line.rfind("mask:", 0) != 0) throw DataError("weights file: expected mask line");
    std::string mask = mask_line.substr(sizeof("mask:") - 1);
    mask.erase(std::remove_if(mask.begin(), mask.end(),
                              [](char c) { return c == ' ' || c == '\t' || c == '\r'; }),
               mask.end());
    if (mask == "style") {
        w.mask_style_mismatch = true;
    } else if (mask != "none") {
        throw DataError("weights file: unknown mask value " + mask);
    }

    for (std::size_t i = 0; i < w.theta.size(); ++i) {
        auto value_line = next_line("weight line");
        std::istringstream ls(value_line);
        std::string name, eq;
        double value = 0.0;
        if (!(ls >> name >> eq >> value) || eq != "=") {
            throw DataError("weights file: malformed line: " + value_line);
        }
        const std::string expect = "a_" + bit_pattern(i, w.features.level_count());
        if (name != expect) {
            throw DataError("weights file: expected " + expect + ", found " + name);
        }
        w.theta[i] = value;
    }
    w.validate();
    return w;
}

void save_weights(const std::filesystem::path& path, const LocalityWeights& weights) {
    atomic_write_file(path, serialize_weights(weights));
}

LocalityWeights load_weights(const std::filesystem::path& path) {
    return parse_weights(read_file(path));
}

} // namespace sknn
