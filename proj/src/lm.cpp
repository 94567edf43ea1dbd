#include "sknn/lm.hpp"

#include "sknn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>

namespace sknn {

namespace {
constexpr char kCheckpointMagic[4] = {'S', 'K', 'L', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;
} // namespace

void LMConfig::validate() const {
    if (context_window < 1 || embedding_dim < 1 || hidden_dim < 1 || vocab_size < 1) {
        throw ConfigError("all model dimensions must be >= 1");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

void LMConfig::serialize(ByteWriter& w) const {
    w.u32(context_window);
    w.u32(embedding_dim);
    w.u32(hidden_dim);
    w.u32(vocab_size);
    w.f64(learning_rate);
    w.u32(epochs);
    w.u32(batch_size);
    w.u64(seed);
}

LMConfig LMConfig::deserialize(ByteReader& r) {
    LMConfig c;
    c.context_window = r.u32();
    c.embedding_dim = r.u32();
    c.hidden_dim = r.u32();
    c.vocab_size = r.u32();
    c.learning_rate = r.f64();
    c.epochs = r.u32();
    c.batch_size = r.u32();
    c.seed = r.u64();
    return c;
}

bool LMParameters::finite() const {
    auto ok = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return ok(embed) && ok(pos_weight) && ok(w1) && ok(b1) && ok(w2) && ok(b2);
}

LMGradient::LMGradient(const LMConfig& c)
    : embed(static_cast<std::size_t>(c.vocab_size) * c.embedding_dim, 0.0),
      pos_weight(c.context_window, 0.0),
      w1(static_cast<std::size_t>(c.hidden_dim) * c.embedding_dim, 0.0),
      b1(c.hidden_dim, 0.0),
      w2(static_cast<std::size_t>(c.vocab_size) * c.hidden_dim, 0.0),
      b2(c.vocab_size, 0.0) {}

void LMGradient::clear() {
    auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    zero(embed);
    zero(pos_weight);
    zero(w1);
    zero(b1);
    zero(w2);
    zero(b2);
}

void LMGradient::scale(double s) {
    auto mul = [s](std::vector<double>& v) {
        for (auto& x : v) x *= s;
    };
    mul(embed);
    mul(pos_weight);
    mul(w1);
    mul(b1);
    mul(w2);
    mul(b2);
}

LMParameters init_lm(const LMConfig& config) {
    config.validate();
    LMParameters p;
    p.config = config;
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> dist(0.0, 0.1);
    auto fill = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (auto& x : v) x = dist(rng);
    };
    fill(p.embed, static_cast<std::size_t>(config.vocab_size) * config.embedding_dim);
    fill(p.w1, static_cast<std::size_t>(config.hidden_dim) * config.embedding_dim);
    fill(p.w2, static_cast<std::size_t>(config.vocab_size) * config.hidden_dim);
    p.pos_weight.assign(config.context_window, 1.0);
    p.b1.assign(config.hidden_dim, 0.0);
    p.b2.assign(config.vocab_size, 0.0);
    return p;
}

void context_window(std::span<const std::uint32_t> context, std::uint32_t n,
                    std::span<std::uint32_t> window) {
    const std::size_t len = context.size();
    for (std::uint32_t i = 0; i < n; ++i) {
        // window slot i holds the token n-1-i steps back from the end
        if (len + i >= n) {
            window[i] = context[len + i - n];
        } else {
            window[i] = Vocabulary::kBos;
        }
    }
}

namespace {

// x = (1/N) * sum_i u_i * E[w_i]
void weighted_mean_embedding(const LMParameters& p, std::span<const std::uint32_t> window,
                             std::span<double> x) {
    const std::uint32_t n = p.config.context_window;
    const std::uint32_t e = p.config.embedding_dim;
    std::fill(x.begin(), x.end(), 0.0);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (window[i] >= p.config.vocab_size) throw ConfigError("token id out of range");
        kernels::axpy_f64(p.pos_weight[i], p.embed.data() + static_cast<std::size_t>(window[i]) * e,
                          x.data(), e);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& v : x) v *= inv_n;
}

void hidden_from_mean(const LMParameters& p, std::span<const double> x, std::span<double> h) {
    const std::uint32_t d = p.config.hidden_dim;
    const std::uint32_t e = p.config.embedding_dim;
    for (std::uint32_t j = 0; j < d; ++j) {
        double z = kernels::dot_f64(p.w1.data() + static_cast<std::size_t>(j) * e, x.data(), e) +
                   p.b1[j];
        h[j] = std::tanh(z);
    }
}

void logits_from_hidden(const LMParameters& p, std::span<const double> h,
                        std::span<double> logits) {
    const std::uint32_t v = p.config.vocab_size;
    const std::uint32_t d = p.config.hidden_dim;
    for (std::uint32_t i = 0; i < v; ++i) {
        logits[i] =
            kernels::dot_f64(p.w2.data() + static_cast<std::size_t>(i) * d, h.data(), d) + p.b2[i];
    }
}

struct Workspace {
    std::vector<std::uint32_t> window;
    std::vector<double> x, h, logits, dh, dz, dx;

    explicit Workspace(const LMConfig& c)
        : window(c.context_window),
          x(c.embedding_dim),
          h(c.hidden_dim),
          logits(c.vocab_size),
          dh(c.hidden_dim),
          dz(c.hidden_dim),
          dx(c.embedding_dim) {}
};

} // namespace

void softmax_inplace(std::span<double> logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : logits) m = std::max(m, v);
    double sum = 0.0;
    for (auto& v : logits) {
        v = std::exp(v - m);
        sum += v;
    }
    for (auto& v : logits) v /= sum;
}

void encode_into(const LMParameters& params, std::span<const std::uint32_t> context,
                 std::span<double> out) {
    Workspace ws(params.config);
    context_window(context, params.config.context_window, ws.window);
    weighted_mean_embedding(params, ws.window, ws.x);
    hidden_from_mean(params, ws.x, out);
}

std::vector<double> encode(const LMParameters& params, std::span<const std::uint32_t> context) {
    std::vector<double> h(params.config.hidden_dim);
    encode_into(params, context, h);
    return h;
}

std::vector<double> lm_distribution(const LMParameters& params,
                                    std::span<const std::uint32_t> context) {
    std::vector<double> h = encode(params, context);
    std::vector<double> logits(params.config.vocab_size);
    logits_from_hidden(params, h, logits);
    softmax_inplace(logits);
    return logits;
}

std::vector<TrainExample> make_examples(const LMParameters& params,
                                        std::span<const Document> docs) {
    const std::uint32_t n = params.config.context_window;
    std::vector<TrainExample> out;
    for (const auto& doc : docs) {
        for (std::size_t pos = 0; pos < doc.tokens.size(); ++pos) {
            TrainExample ex;
            ex.window.resize(n);
            context_window(std::span(doc.tokens.data(), pos), n, ex.window);
            ex.target = doc.tokens[pos];
            out.push_back(std::move(ex));
        }
    }
    return out;
}

namespace {

double example_loss(const LMParameters& p, const TrainExample& ex, Workspace& ws,
                    LMGradient* grad) {
    const std::uint32_t v = p.config.vocab_size;
    const std::uint32_t d = p.config.hidden_dim;
    const std::uint32_t e = p.config.embedding_dim;
    const std::uint32_t n = p.config.context_window;
    if (ex.target >= v) throw ConfigError("target token id out of range");

    weighted_mean_embedding(p, ex.window, ws.x);
    hidden_from_mean(p, ws.x, ws.h);
    logits_from_hidden(p, ws.h, ws.logits);
    softmax_inplace(ws.logits); // ws.logits now holds probabilities
    const double loss = -std::log(ws.logits[ex.target]);

    if (grad != nullptr) {
        // dlogits = p - onehot(target), consumed in place
        ws.logits[ex.target] -= 1.0;
        std::fill(ws.dh.begin(), ws.dh.end(), 0.0);
        for (std::uint32_t i = 0; i < v; ++i) {
            const double g = ws.logits[i];
            if (g == 0.0) continue;
            grad->b2[i] += g;
            double* w2_row_grad = grad->w2.data() + static_cast<std::size_t>(i) * d;
            kernels::axpy_f64(g, ws.h.data(), w2_row_grad, d);
            kernels::axpy_f64(g, p.w2.data() + static_cast<std::size_t>(i) * d, ws.dh.data(), d);
        }
        for (std::uint32_t j = 0; j < d; ++j) {
            ws.dz[j] = ws.dh[j] * (1.0 - ws.h[j] * ws.h[j]);
            grad->b1[j] += ws.dz[j];
            kernels::axpy_f64(ws.dz[j], ws.x.data(),
                              grad->w1.data() + static_cast<std::size_t>(j) * e, e);
        }
        std::fill(ws.dx.begin(), ws.dx.end(), 0.0);
        for (std::uint32_t j = 0; j < d; ++j) {
            kernels::axpy_f64(ws.dz[j], p.w1.data() + static_cast<std::size_t>(j) * e,
                              ws.dx.data(), e);
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            const double* row = p.embed.data() + static_cast<std::size_t>(ex.window[i]) * e;
            grad->pos_weight[i] += inv_n * kernels::dot_f64(row, ws.dx.data(), e);
            kernels::axpy_f64(p.pos_weight[i] * inv_n, ws.dx.data(),
                              grad->embed.data() + static_cast<std::size_t>(ex.window[i]) * e, e);
        }
    }
    return loss;
}

} // namespace

double lm_batch_loss(const LMParameters& params, std::span<const TrainExample> batch,
                     LMGradient* grad) {
    if (batch.empty()) throw ConfigError("empty batch");
    Workspace ws(params.config);
    if (grad != nullptr) grad->clear();
    double total = 0.0;
    for (const auto& ex : batch) total += example_loss(params, ex, ws, grad);
    const double inv = 1.0 / static_cast<double>(batch.size());
    if (grad != nullptr) grad->scale(inv);
    return total * inv;
}

namespace {

void sgd_step(LMParameters& p, const LMGradient& g, double lr) {
    auto upd = [lr](std::vector<double>& v, const std::vector<double>& gv) {
        kernels::axpy_f64(-lr, gv.data(), v.data(), v.size());
    };
    upd(p.embed, g.embed);
    upd(p.pos_weight, g.pos_weight);
    upd(p.w1, g.w1);
    upd(p.b1, g.b1);
    upd(p.w2, g.w2);
    upd(p.b2, g.b2);
}

double mean_loss(const LMParameters& p, std::span<const TrainExample> examples) {
    return lm_batch_loss(p, examples, nullptr);
}

} // namespace

LMParameters train_lm(const LMConfig& config, std::span<const Document> docs,
                      TrainTrace* trace) {
    LMParameters params = init_lm(config);

    std::vector<Document> train_docs, valid_docs;
    for (const auto& d : docs) {
        if (d.split == Split::train) train_docs.push_back(d);
        if (d.split == Split::valid) valid_docs.push_back(d);
    }
    if (train_docs.empty()) throw DataError("train_lm: no training documents");
    if (config.epochs == 0) return params;

    auto train_examples = make_examples(params, train_docs);
    auto valid_examples = make_examples(params, valid_docs);

    std::mt19937_64 shuffle_rng(splitmix64(config.seed));
    std::vector<std::size_t> order(train_examples.size());
    std::iota(order.begin(), order.end(), 0);

    LMGradient grad(config);
    std::vector<TrainExample> batch;
    batch.reserve(config.batch_size);

    constexpr std::uint32_t kPatience = 5;
    double best_valid = std::numeric_limits<double>::infinity();
    LMParameters best_params = params;
    std::uint32_t since_best = 0;

    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            batch.clear();
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            for (std::size_t i = start; i < stop; ++i) batch.push_back(train_examples[order[i]]);
            const double loss = lm_batch_loss(params, batch, &grad);
            if (!std::isfinite(loss)) {
                throw NumericError("train_lm diverged (loss not finite) at epoch " +
                                   std::to_string(epoch));
            }
            sgd_step(params, grad, config.learning_rate);
            epoch_loss += loss;
            ++n_batches;
        }
        epoch_loss /= static_cast<double>(n_batches);
        if (trace != nullptr) trace->train_loss.push_back(epoch_loss);
        if (!params.finite()) {
            throw NumericError("train_lm diverged (parameters not finite) at epoch " +
                               std::to_string(epoch));
        }

        if (!valid_examples.empty()) {
            const double vl = mean_loss(params, valid_examples);
            if (trace != nullptr) trace->valid_loss.push_back(vl);
            if (vl < best_valid) {
                best_valid = vl;
                best_params = params;
                since_best = 0;
            } else if (++since_best >= kPatience) {
                if (trace != nullptr) {
                    trace->epochs_run = epoch + 1;
                    trace->early_stopped = true;
                }
                return best_params;
            }
        }
        if (trace != nullptr) trace->epochs_run = epoch + 1;
    }
    return valid_examples.empty() ? params : best_params;
}

std::string serialize_checkpoint(const LMParameters& params) {
    ByteWriter w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.u32(kCheckpointVersion);
    params.config.serialize(w);
    auto mat = [&w](const std::vector<double>& v) {
        for (double x : v) w.f64(x);
    };
    mat(params.embed);
    mat(params.pos_weight);
    mat(params.w1);
    mat(params.b1);
    mat(params.w2);
    mat(params.b2);
    return w.take();
}

LMParameters deserialize_checkpoint(std::string_view bytes) {
    ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError("not a model checkpoint");
    if (r.u32() != kCheckpointVersion) throw DataError("unsupported checkpoint version");
    LMParameters p;
    p.config = LMConfig::deserialize(r);
    p.config.validate();
    auto mat = [&r](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (auto& x : v) x = r.f64();
    };
    const auto& c = p.config;
    mat(p.embed, static_cast<std::size_t>(c.vocab_size) * c.embedding_dim);
    mat(p.pos_weight, c.context_window);
    mat(p.w1, static_cast<std::size_t>(c.hidden_dim) * c.embedding_dim);
    mat(p.b1, c.hidden_dim);
    mat(p.w2, static_cast<std::size_t>(c.vocab_size) * c.hidden_dim);
    mat(p.b2, c.vocab_size);
    if (!r.done()) throw DataError("trailing bytes in checkpoint");
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const LMParameters& params) {
    atomic_write_file(path, serialize_checkpoint(params));
}

LMParameters load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file(path));
}

double perplexity(const LMParameters& params, std::span<const Document> docs) {
    if (docs.empty()) throw DataError("perplexity: no documents");
    auto examples = make_examples(params, docs);
    double nll = mean_loss(params, examples);
    return std::exp(nll);
}

} // namespace sknn
