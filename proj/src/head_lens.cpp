#include "loopscope/head_lens.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "loopscope/distribution.hpp"
#include "loopscope/rng.hpp"
#include "loopscope/thread_pool.hpp"

namespace loopscope {

namespace {

// Forward through the lens head-space: u = W*A + b, then the model's final
// layer norm. Caches what the backward pass needs.
struct LensForward {
    Eigen::VectorXf u, xhat, h;
    float inv_std = 0.0f;
};

LensForward lens_forward(const Model& model, const Eigen::MatrixXf& w, const Eigen::VectorXf& b,
                         const Eigen::VectorXf& update) {
    LensForward f;
    f.u.noalias() = w * update;
    f.u += b;
    const auto d = static_cast<double>(f.u.size());
    double mean = 0.0;
    for (Eigen::Index i = 0; i < f.u.size(); ++i) mean += f.u[i];
    mean /= d;
    double var = 0.0;
    for (Eigen::Index i = 0; i < f.u.size(); ++i) {
        const double diff = f.u[i] - mean;
        var += diff * diff;
    }
    var /= d;
    f.inv_std = 1.0f / std::sqrt(static_cast<float>(var) + model.config().layernorm_epsilon);
    f.xhat = (f.u.array() - static_cast<float>(mean)) * f.inv_std;
    f.h = (f.xhat.array() * model.weights().ln_final_w.array()) + model.weights().ln_final_b.array();
    return f;
}

// Target distribution (float) and its entropy for one training sample.
struct Target {
    Eigen::VectorXf p;
    double neg_entropy;  // sum p ln p
};

Target make_target(const Model& model, const Eigen::VectorXf& final_residual) {
    Target t;
    const Eigen::VectorXf z = model.weights().unembed * model.final_norm(final_residual);
    const float m = z.maxCoeff();
    double zsum = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) zsum += std::exp(static_cast<double>(z[i]) - m);
    const double lnz = std::log(zsum);
    t.p.resize(z.size());
    t.neg_entropy = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double lq = static_cast<double>(z[i]) - m - lnz;
        const double q = std::exp(lq);
        t.p[i] = static_cast<float>(q);
        if (q > 0.0) t.neg_entropy += q * lq;
    }
    return t;
}

// KL(p || softmax(z)) and optionally its gradient wrt z (= q - p).
double kl_against(const Eigen::VectorXf& z, const Target& target, Eigen::VectorXf* grad_z) {
    const float m = z.maxCoeff();
    double zsum = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) zsum += std::exp(static_cast<double>(z[i]) - m);
    const double lnz = std::log(zsum);
    // sum p ln q = p.z - m - lnZ, since p sums to 1
    double pz = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) pz += static_cast<double>(target.p[i]) * z[i];
    const double kl = target.neg_entropy - (pz - static_cast<double>(m) - lnz);
    if (grad_z) {
        grad_z->resize(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const float q = static_cast<float>(std::exp(static_cast<double>(z[i]) - m - lnz));
            (*grad_z)[i] = q - target.p[i];
        }
    }
    return kl;
}

// Backprop from grad wrt z through unembedding and layer norm down to u.
Eigen::VectorXf backward_to_u(const Model& model, const LensForward& f, const Eigen::VectorXf& grad_z) {
    const Eigen::VectorXf gh = model.weights().unembed.transpose() * grad_z;
    const Eigen::VectorXf gx = gh.array() * model.weights().ln_final_w.array();
    const float mean_gx = gx.mean();
    const float mean_gx_xhat = (gx.array() * f.xhat.array()).mean();
    return ((gx.array() - mean_gx - f.xhat.array() * mean_gx_xhat) * f.inv_std).matrix();
}

double head_sample_kl(const Model& model, const HeadLens& lens, const Eigen::VectorXf& update,
                      const Target& target) {
    const LensForward f = lens_forward(model, lens.w, lens.b, update);
    const Eigen::VectorXf z = model.weights().unembed * f.h;
    return kl_against(z, target, nullptr);
}

}  // namespace

LensTrainingData collect_training_data(const Model& model, std::span<const TokenSequence> corpus,
                                       unsigned threads) {
    LensTrainingData data;
    data.head_updates.resize(corpus.size());
    data.final_residual.resize(corpus.size());
    parallel_for(corpus.size(), threads, [&](std::size_t i) {
        std::span<const TokenId> ids = corpus[i].ids;
        if (ids.empty()) throw std::invalid_argument("empty sequence in lens corpus");
        if (static_cast<int>(ids.size()) > model.config().max_context) {
            ids = ids.subspan(ids.size() - static_cast<std::size_t>(model.config().max_context));
        }
        // only the final position represents the sequence
        const ForwardTrace trace = model.forward(ids, true);
        data.head_updates[i] = trace.head_updates.front();
        data.final_residual[i] = trace.final_residual.front();
    });
    return data;
}

std::vector<double> evaluate_lens_kl(const Model& model, const LensSet& lenses,
                                     const LensTrainingData& data, std::size_t max_samples,
                                     unsigned threads) {
    const std::size_t n = std::min(max_samples, data.final_residual.size());
    const std::size_t head_count = lenses.lenses.size();
    std::vector<double> sums(head_count, 0.0);

    // per-sample targets shared across heads
    std::vector<Target> targets(n);
    parallel_for(n, threads, [&](std::size_t i) { targets[i] = make_target(model, data.final_residual[i]); });

    parallel_for(head_count, threads, [&](std::size_t hi) {
        const HeadLens& lens = lenses.lenses[hi];
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += head_sample_kl(model, lens, data.head_updates[i].col(static_cast<Eigen::Index>(hi)),
                                  targets[i]);
        }
        sums[hi] = acc / static_cast<double>(n);
    });
    return sums;
}

LensSet train_lenses(const Model& model, const LensTrainingData& data, const LensTrainOptions& opts,
                     LensTrainStats* stats) {
    const ModelConfig& cfg = model.config();
    const std::size_t n_samples = data.final_residual.size();
    const std::size_t head_count = static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads;
    if (n_samples < static_cast<std::size_t>(opts.batch_size)) {
        throw std::invalid_argument("lens corpus too small: " + std::to_string(n_samples) +
                                    " samples for batch size " + std::to_string(opts.batch_size));
    }
    for (const auto& m : data.head_updates) {
        if (m.cols() != static_cast<Eigen::Index>(head_count) || m.rows() != cfg.d_model) {
            throw std::invalid_argument("training data head count does not match the model");
        }
    }

    LensSet set;
    set.n_layers = cfg.n_layers;
    set.n_heads = cfg.n_heads;
    set.shared_per_layer = opts.share_per_layer;
    set.lenses.resize(head_count);
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            HeadLens& lens = set.at(l, h);
            lens.layer = l;
            lens.head = h;
            lens.w = Eigen::MatrixXf::Identity(cfg.d_model, cfg.d_model);
            lens.b = Eigen::VectorXf::Zero(cfg.d_model);
        }
    }

    if (stats) {
        stats->samples = n_samples;
        const auto init_kl = evaluate_lens_kl(model, set, data, opts.eval_samples, opts.threads);
        stats->init_layer_kl.assign(static_cast<std::size_t>(cfg.n_layers), 0.0);
        for (std::size_t hi = 0; hi < head_count; ++hi) {
            stats->init_layer_kl[hi / static_cast<std::size_t>(cfg.n_heads)] += init_kl[hi] / cfg.n_heads;
        }
    }

    // When sharing, head column h of layer l still trains layer-lens l; the
    // trained parameters are replicated across the layer at the end.
    const std::size_t param_count =
        opts.share_per_layer ? static_cast<std::size_t>(cfg.n_layers) : head_count;
    std::vector<Eigen::MatrixXf> w_param(param_count,
                                         Eigen::MatrixXf::Identity(cfg.d_model, cfg.d_model));
    std::vector<Eigen::VectorXf> b_param(param_count, Eigen::VectorXf::Zero(cfg.d_model));

    Rng shuffle_rng(derive_seed(opts.seed, "lens-shuffle"));
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), 0);

    const std::size_t steps_per_epoch = n_samples / static_cast<std::size_t>(opts.batch_size);
    int step = 0;
    std::vector<double> head_loss(head_count, 0.0);

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        for (std::size_t i = n_samples - 1; i > 0; --i) {
            std::swap(order[i], order[shuffle_rng.below(i + 1)]);
        }
        for (std::size_t bstart = 0; bstart + opts.batch_size <= n_samples;
             bstart += static_cast<std::size_t>(opts.batch_size)) {
            const std::span<const std::size_t> batch(order.data() + bstart,
                                                     static_cast<std::size_t>(opts.batch_size));

            std::vector<Target> targets(batch.size());
            parallel_for(batch.size(), opts.threads,
                         [&](std::size_t k) { targets[k] = make_target(model, data.final_residual[batch[k]]); });

            parallel_for(param_count, opts.threads, [&](std::size_t pi) {
                Eigen::MatrixXf grad_w = Eigen::MatrixXf::Zero(cfg.d_model, cfg.d_model);
                Eigen::VectorXf grad_b = Eigen::VectorXf::Zero(cfg.d_model);
                Eigen::VectorXf grad_z;
                double loss = 0.0;
                std::size_t used = 0;

                const int heads_here = opts.share_per_layer ? cfg.n_heads : 1;
                for (int hh = 0; hh < heads_here; ++hh) {
                    const std::size_t col =
                        opts.share_per_layer ? pi * static_cast<std::size_t>(cfg.n_heads) + static_cast<std::size_t>(hh)
                                             : pi;
                    for (std::size_t k = 0; k < batch.size(); ++k) {
                        const Eigen::VectorXf update =
                            data.head_updates[batch[k]].col(static_cast<Eigen::Index>(col));
                        const LensForward f = lens_forward(model, w_param[pi], b_param[pi], update);
                        const Eigen::VectorXf z = model.weights().unembed * f.h;
                        loss += kl_against(z, targets[k], &grad_z);
                        const Eigen::VectorXf gu = backward_to_u(model, f, grad_z);
                        grad_w.noalias() += gu * update.transpose();
                        grad_b += gu;
                        ++used;
                    }
                }

                loss /= static_cast<double>(used);
                const float scale = static_cast<float>(opts.learning_rate / static_cast<double>(used));
                w_param[pi].noalias() -= scale * grad_w;
                b_param[pi] -= scale * grad_b;
                if (opts.share_per_layer) {
                    for (int h = 0; h < cfg.n_heads; ++h) {
                        head_loss[pi * static_cast<std::size_t>(cfg.n_heads) + static_cast<std::size_t>(h)] = loss;
                    }
                } else {
                    head_loss[pi] = loss;
                }
            });

            ++step;
            if (stats) {
                double mean = 0.0;
                for (const double l : head_loss) mean += l;
                mean /= static_cast<double>(head_count);
                if (!std::isfinite(mean)) {
                    throw std::runtime_error("non-finite lens training loss at step " + std::to_string(step));
                }
                stats->step_loss.push_back(mean);
            } else {
                double mean = 0.0;
                for (const double l : head_loss) mean += l;
                if (!std::isfinite(mean)) {
                    throw std::runtime_error("non-finite lens training loss at step " + std::to_string(step));
                }
            }
        }
    }
    (void)steps_per_epoch;

    for (std::size_t hi = 0; hi < head_count; ++hi) {
        const std::size_t pi = opts.share_per_layer ? hi / static_cast<std::size_t>(cfg.n_heads) : hi;
        set.lenses[hi].w = w_param[pi];
        set.lenses[hi].b = b_param[pi];
        set.lenses[hi].steps = step;
    }

    const auto final_kl = evaluate_lens_kl(model, set, data, opts.eval_samples, opts.threads);
    for (std::size_t hi = 0; hi < head_count; ++hi) set.lenses[hi].final_kl = final_kl[hi];
    if (stats) {
        stats->steps = step;
        stats->final_layer_kl.assign(static_cast<std::size_t>(cfg.n_layers), 0.0);
        for (std::size_t hi = 0; hi < head_count; ++hi) {
            stats->final_layer_kl[hi / static_cast<std::size_t>(cfg.n_heads)] += final_kl[hi] / cfg.n_heads;
        }
    }
    return set;
}

LensSet train_lenses(const Model& model, std::span<const TokenSequence> corpus,
                     const LensTrainOptions& opts, LensTrainStats* stats) {
    if (corpus.empty()) throw std::invalid_argument("lens corpus is empty");
    const LensTrainingData data = collect_training_data(model, corpus, opts.threads);
    return train_lenses(model, data, opts, stats);
}

Eigen::VectorXf translate(const Model& model, const HeadLens& lens, const Eigen::VectorXf& update) {
    if (update.size() != model.config().d_model) {
        throw std::invalid_argument("head update dimension does not match d_model");
    }
    const LensForward f = lens_forward(model, lens.w, lens.b, update);
    return model.weights().unembed * f.h;
}

double contrast(const Model& model, const HeadLens& lens, const Eigen::VectorXf& update, TokenId ctok,
                TokenId ntok) {
    if (ctok == ntok) throw std::invalid_argument("contrast requires ctok != ntok");
    const int v = model.config().vocab_size;
    if (ctok < 0 || ctok >= v || ntok < 0 || ntok >= v) {
        throw std::invalid_argument("contrast token id out of range");
    }
    const Eigen::VectorXf z = translate(model, lens, update);
    const float m = z.maxCoeff();
    double zsum = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) zsum += std::exp(static_cast<double>(z[i]) - m);
    const double pc = std::exp(static_cast<double>(z[ctok]) - m) / zsum;
    const double pn = std::exp(static_cast<double>(z[ntok]) - m) / zsum;
    return pc - pn;
}

void save_lenses(const LensSet& lenses, const std::string& path) {
    std::map<std::string, TensorData> tensors;
    for (const HeadLens& lens : lenses.lenses) {
        const std::string base = "lens.l" + std::to_string(lens.layer) + ".h" + std::to_string(lens.head);
        TensorData w;
        w.shape = {lens.w.rows(), lens.w.cols()};
        w.values.resize(static_cast<std::size_t>(lens.w.size()));
        for (Eigen::Index r = 0; r < lens.w.rows(); ++r) {
            for (Eigen::Index c = 0; c < lens.w.cols(); ++c) {
                w.values[static_cast<std::size_t>(r * lens.w.cols() + c)] = lens.w(r, c);
            }
        }
        tensors[base + ".W"] = std::move(w);
        TensorData b;
        b.shape = {lens.b.size()};
        b.values.assign(lens.b.data(), lens.b.data() + lens.b.size());
        tensors[base + ".b"] = std::move(b);
    }
    TensorArchive::write(path, tensors);
}

LensSet load_lenses(const std::string& path, const Model& model) {
    const TensorArchive archive = TensorArchive::read(path);
    const ModelConfig& cfg = model.config();
    LensSet set;
    set.n_layers = cfg.n_layers;
    set.n_heads = cfg.n_heads;
    set.lenses.resize(static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads);
    const auto d = static_cast<std::int64_t>(cfg.d_model);
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            const std::string base = "lens.l" + std::to_string(l) + ".h" + std::to_string(h);
            const TensorData& wt = archive.get(base + ".W", {d, d});
            const TensorData& bt = archive.get(base + ".b", {d});
            HeadLens& lens = set.at(l, h);
            lens.layer = l;
            lens.head = h;
            lens.w.resize(d, d);
            for (std::int64_t r = 0; r < d; ++r) {
                for (std::int64_t c = 0; c < d; ++c) {
                    lens.w(r, c) = wt.values[static_cast<std::size_t>(r * d + c)];
                }
            }
            lens.b = Eigen::Map<const Eigen::VectorXf>(bt.values.data(), d);
        }
    }
    return set;
}

TrajectorySet head_trajectories(const Model& model, const LensSet& lenses,
                                std::span<const PromptPair> pairs, Condition condition, int k_cycles,
                                unsigned threads) {
    if (k_cycles < 1) throw std::invalid_argument("k_cycles must be >= 1");
    const ModelConfig& cfg = model.config();
    const std::size_t head_count = static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads;
    if (lenses.lenses.size() != head_count) {
        throw std::invalid_argument("lens set does not cover every head of the model");
    }

    // per pair: [head][cycle] mean contrast, plus how many cycles fit
    struct PairResult {
        std::vector<std::vector<double>> per_cycle;  // head -> cycle -> mean
        int cycles = 0;
    };
    std::vector<PairResult> results(pairs.size());

    parallel_for(pairs.size(), threads, [&](std::size_t pi) {
        const PromptPair& pair = pairs[pi];
        const auto prompt = pair.prompt_ids(condition);
        const int prompt_len = static_cast<int>(prompt.size());
        const int n = pair.cycle.length;

        const int room = cfg.max_context - prompt_len;
        const int gen_cycles = std::min(k_cycles - 1, room / n);
        if (gen_cycles < 1) return;  // pair contributes nothing

        const Generation gen = model.generate_greedy(
            TokenSequence{std::vector<TokenId>(prompt.begin(), prompt.end()), pair.model_id},
            gen_cycles * n);
        const std::vector<TokenId> seq = concat(prompt, gen.tokens.ids);

        // context positions whose next token belongs to each cycle index
        std::vector<std::pair<int, int>> target_ranges;  // [first, last] target positions
        if (condition == Condition::kNatural) {
            target_ranges.emplace_back(1, prompt_len - 1);
        } else {
            target_ranges.emplace_back(1, n - 1);
        }
        for (int c = 1; c <= gen_cycles; ++c) {
            target_ranges.emplace_back(prompt_len + (c - 1) * n, prompt_len + c * n - 1);
        }

        std::vector<int> positions;
        for (const auto& [first, last] : target_ranges) {
            for (int q = first; q <= last; ++q) positions.push_back(q - 1);
        }

        const ForwardTrace trace = model.forward(seq, true, positions);

        PairResult& res = results[pi];
        res.cycles = gen_cycles + 1;
        res.per_cycle.assign(head_count, std::vector<double>(static_cast<std::size_t>(res.cycles), 0.0));

        std::size_t pos_index = 0;
        for (std::size_t cycle = 0; cycle < target_ranges.size(); ++cycle) {
            const auto& [first, last] = target_ranges[cycle];
            const int count = last - first + 1;
            for (int q = first; q <= last; ++q, ++pos_index) {
                const Eigen::VectorXf& logits = trace.logits[pos_index];
                const TokenId ctok = seq[static_cast<std::size_t>(q)];
                const TokenId ntok = argmax_excluding(logits, ctok);
                const Eigen::MatrixXf& updates = trace.head_updates[pos_index];
                for (std::size_t hi = 0; hi < head_count; ++hi) {
                    res.per_cycle[hi][cycle] +=
                        contrast(model, lenses.lenses[hi], updates.col(static_cast<Eigen::Index>(hi)),
                                 ctok, ntok) /
                        count;
                }
            }
        }
    });

    TrajectorySet out;
    out.condition = condition;
    out.k_cycles = k_cycles;
    out.heads.resize(head_count);
    for (std::size_t hi = 0; hi < head_count; ++hi) {
        ContrastTrajectory& t = out.heads[hi];
        t.layer = static_cast<int>(hi) / cfg.n_heads;
        t.head = static_cast<int>(hi) % cfg.n_heads;
        t.contrast.assign(static_cast<std::size_t>(k_cycles), 0.0);
        t.count.assign(static_cast<std::size_t>(k_cycles), 0);
    }
    for (const PairResult& res : results) {
        for (std::size_t hi = 0; hi < head_count && res.cycles > 0; ++hi) {
            for (int c = 0; c < res.cycles; ++c) {
                out.heads[hi].contrast[static_cast<std::size_t>(c)] +=
                    res.per_cycle[hi][static_cast<std::size_t>(c)];
                ++out.heads[hi].count[static_cast<std::size_t>(c)];
            }
        }
    }
    for (ContrastTrajectory& t : out.heads) {
        double total = 0.0;
        int cycles_with_data = 0;
        for (std::size_t c = 0; c < t.contrast.size(); ++c) {
            if (t.count[c] > 0) {
                t.contrast[c] /= static_cast<double>(t.count[c]);
                total += t.contrast[c];
                ++cycles_with_data;
            }
        }
        t.mean_contrast = cycles_with_data ? total / cycles_with_data : 0.0;
    }

    std::vector<std::size_t> order(head_count);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (out.heads[a].mean_contrast != out.heads[b].mean_contrast) {
            return out.heads[a].mean_contrast > out.heads[b].mean_contrast;
        }
        return a < b;
    });
    for (std::size_t i = 0; i < std::min<std::size_t>(2, head_count); ++i) {
        out.top2.emplace_back(out.heads[order[i]].layer, out.heads[order[i]].head);
        const auto& tail = out.heads[order[head_count - 1 - i]];
        out.bottom2.emplace_back(tail.layer, tail.head);
    }
    return out;
}

}  // namespace loopscope
