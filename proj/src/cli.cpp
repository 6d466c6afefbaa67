#include "loopscope/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "loopscope/dataset.hpp"
#include "loopscope/head_lens.hpp"
#include "loopscope/manifest.hpp"
#include "loopscope/perturb.hpp"
#include "loopscope/prob_entropy.hpp"
#include "loopscope/report.hpp"
#include "loopscope/svg.hpp"
#include "loopscope/thread_pool.hpp"
#include "loopscope/toy_model.hpp"

namespace loopscope {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string default_model_dir() {
    const char* env = std::getenv("LOOPSCOPE_MODEL_DIR");
    return env ? env : "";
}

void require_exists(const std::string& path, const char* what) {
    if (path.empty()) throw std::runtime_error(std::string(what) + " not given and no default set");
    if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " not found: " + path);
}

Vocab load_vocab(const Model& model, const std::string& model_dir) {
    if (model.config().tokenizer == "bpe") {
        return Vocab::load_bpe((fs::path(model_dir) / "vocab.json").string(),
                               (fs::path(model_dir) / "merges.txt").string());
    }
    return Vocab::byte_fallback();
}

void verify_or_throw(const Model& model, std::span<const PromptPair> pairs, unsigned threads) {
    const VerifyReport rep = verify_dataset(model, pairs, threads);
    if (!rep.failures.empty()) {
        throw std::runtime_error("dataset verification failed for " +
                                 std::to_string(rep.failures.size()) + "/" +
                                 std::to_string(rep.total) + " pairs; first: " +
                                 rep.failures.front().first + ": " + rep.failures.front().second);
    }
}

std::vector<PromptPair> load_pairs(const std::string& path, std::size_t limit) {
    std::vector<PromptPair> pairs = load_dataset(path);
    if (pairs.empty()) throw std::runtime_error("dataset is empty: " + path);
    if (limit > 0 && pairs.size() > limit) pairs.resize(limit);
    return pairs;
}

// ---- figure builders ----

std::string fig_prob_entropy(const AggregateSeries& natural, const AggregateSeries& icl) {
    auto panel = [&](bool entropy) {
        PlotPanel p;
        p.title = entropy ? "Entropy per cycle" : "Selected-token probability per cycle";
        p.x_label = "cycle";
        p.y_label = entropy ? "entropy (nats)" : "probability";
        if (!entropy) {
            p.y_min = 0.0;
            p.y_max = 1.0;
        }
        for (const auto* agg : {&natural, &icl}) {
            PlotSeries s;
            PlotBand band;
            s.label = condition_name(agg->condition);
            s.color = agg->condition == Condition::kNatural ? "#ff7f0e" : "#1f77b4";
            band.color = s.color;
            for (const AggregateRow& row : agg->rows) {
                s.x.push_back(row.cycle);
                band.x.push_back(row.cycle);
                s.y.push_back(entropy ? row.mean_entropy : row.mean_prob);
                band.lo.push_back(entropy ? row.p5_entropy : row.p5_prob);
                band.hi.push_back(entropy ? row.p95_entropy : row.p95_prob);
            }
            p.bands.push_back(std::move(band));
            p.series.push_back(std::move(s));
        }
        return p;
    };
    return render_svg({panel(false), panel(true)}, 2);
}

std::string fig_trajectories(const TrajectorySet& natural, const TrajectorySet& icl) {
    auto panel = [&](const TrajectorySet& t) {
        PlotPanel p;
        p.title = std::string("Head contrast, ") + condition_name(t.condition) + " prompts";
        p.x_label = "cycle";
        p.y_label = "contrast";
        auto highlighted = [&](int layer, int head) {
            for (const auto& [l, h] : t.top2) {
                if (l == layer && h == head) return 1;
            }
            for (const auto& [l, h] : t.bottom2) {
                if (l == layer && h == head) return 2;
            }
            return 0;
        };
        // grey background heads first, highlighted ones on top
        for (int pass = 0; pass < 2; ++pass) {
            int top_seen = 0, bottom_seen = 0;
            for (const ContrastTrajectory& head : t.heads) {
                const int mark = highlighted(head.layer, head.head);
                if ((pass == 0) != (mark == 0)) continue;
                PlotSeries s;
                if (mark != 0) {
                    s.label = "L" + std::to_string(head.layer) + "H" + std::to_string(head.head);
                    s.color = mark == 1 ? (top_seen++ == 0 ? "#2ca02c" : "#9467bd")
                                        : (bottom_seen++ == 0 ? "#d62728" : "#e377c2");
                    s.emphasize = true;
                } else {
                    s.color = "#cccccc";
                    s.width = 0.8;
                }
                for (std::size_t c = 0; c < head.contrast.size(); ++c) {
                    if (head.count[c] == 0) continue;
                    s.x.push_back(static_cast<double>(c));
                    s.y.push_back(head.contrast[c]);
                }
                p.series.push_back(std::move(s));
            }
        }
        p.max_legend_entries = 4;
        return p;
    };
    return render_svg({panel(natural), panel(icl)}, 2);
}

std::string fig_perturb(const std::vector<SweepCell>& cells) {
    auto panel = [&](Condition cond, bool rouge) {
        PlotPanel p;
        p.title = std::string(rouge ? "ROUGE-L vs greedy, " : "Proportion repetitive, ") +
                  condition_name(cond);
        p.x_label = "p";
        p.y_label = rouge ? "mean ROUGE-L" : "proportion";
        p.y_min = 0.0;
        p.y_max = 1.0;
        std::vector<int> cycle_values;
        for (const SweepCell& c : cells) {
            if (c.condition != cond) continue;
            if (std::find(cycle_values.begin(), cycle_values.end(), c.cycles_in_prompt) ==
                cycle_values.end()) {
                cycle_values.push_back(c.cycles_in_prompt);
            }
        }
        std::sort(cycle_values.begin(), cycle_values.end());
        for (std::size_t i = 0; i < cycle_values.size(); ++i) {
            PlotSeries s;
            s.label = "+" + std::to_string(cycle_values[i]) + " cycles";
            s.width = 1.0 + 0.5 * static_cast<double>(i);
            for (const SweepCell& c : cells) {
                if (c.condition != cond || c.cycles_in_prompt != cycle_values[i]) continue;
                s.x.push_back(c.p);
                s.y.push_back(rouge ? c.mean_rouge : c.proportion_repetitive);
            }
            p.series.push_back(std::move(s));
        }
        return p;
    };
    return render_svg({panel(Condition::kNatural, false), panel(Condition::kIcl, false),
                       panel(Condition::kNatural, true), panel(Condition::kIcl, true)},
                      2);
}

// ---- subcommands ----

int cmd_toy_model(std::uint64_t seed, const std::string& out_dir) {
    write_toy_model(seed, out_dir);
    write_manifest(out_dir, "toy-model", seed, json::object(),
                   json{{"seed", seed}}, {"model.safetensors", "config.json"});
    std::cout << "wrote toy model (seed " << seed << ") to " << out_dir << "\n";
    return 0;
}

int cmd_build_dataset(const std::string& corpus, const std::string& model_dir, std::size_t lines,
                      const std::string& out_file, const BuildOptions& opts) {
    require_exists(corpus, "corpus file");
    require_exists(model_dir, "model directory");
    const Model model = Model::load_dir(model_dir);
    const Vocab vocab = load_vocab(model, model_dir);

    const std::vector<std::string> corpus_lines = read_corpus_lines(corpus, lines);
    BuildOptions build_opts = opts;
    build_opts.max_lines = lines;
    const BuildResult result = build_dataset(model, vocab, corpus_lines, build_opts);

    const fs::path out_path(out_file);
    const std::string out_dir = out_path.has_parent_path() ? out_path.parent_path().string() : ".";
    fs::create_directories(out_dir);
    save_dataset(result.pairs, out_file);
    write_text_atomic((fs::path(out_dir) / "build_report.json").string(),
                      result.report.to_json_text(model.config().model_id, build_opts));

    std::map<int, std::size_t> hist;
    for (const PromptPair& p : result.pairs) ++hist[p.cycle.length];
    std::ostringstream hist_csv;
    hist_csv << "cycle_length,count\n";
    for (const auto& [len, count] : hist) hist_csv << len << "," << count << "\n";
    write_text_atomic((fs::path(out_dir) / "cycle_hist.csv").string(), hist_csv.str());

    write_manifest(out_dir, "build-dataset", 0,
                   json{{"corpus", corpus}, {"model", model_dir}},
                   json{{"lines", lines},
                        {"max_new", build_opts.max_new},
                        {"min_cycle_len", build_opts.min_cycle_len},
                        {"min_reps", build_opts.min_reps},
                        {"model_id", model.config().model_id}},
                   {out_path.filename().string(), "build_report.json", "cycle_hist.csv"});

    std::cout << "kept " << result.report.kept << "/" << result.report.lines_read
              << " lines (natural repetition rate " << num(result.report.natural_retention()) << ")\n";
    return 0;
}

int cmd_verify(const std::string& dataset, const std::string& model_dir, std::string out_dir,
               unsigned threads) {
    require_exists(dataset, "dataset file");
    require_exists(model_dir, "model directory");
    const Model model = Model::load_dir(model_dir);
    const std::vector<PromptPair> pairs = load_pairs(dataset, 0);
    const VerifyReport rep = verify_dataset(model, pairs, threads);

    if (out_dir.empty()) {
        const fs::path p(dataset);
        out_dir = p.has_parent_path() ? p.parent_path().string() : ".";
    }
    json failures = json::array();
    for (const auto& [id, reason] : rep.failures) failures.push_back({{"id", id}, {"reason", reason}});
    write_text_atomic((fs::path(out_dir) / "verify_report.json").string(),
                      json{{"total", rep.total}, {"ok", rep.ok}, {"failures", failures}}.dump(2) + "\n");
    write_manifest(out_dir, "verify", 0, json{{"dataset", dataset}, {"model", model_dir}},
                   json{{"model_id", model.config().model_id}}, {"verify_report.json"});

    std::cout << rep.ok << "/" << rep.total << " pairs verified\n";
    if (!rep.failures.empty()) {
        throw std::runtime_error(std::to_string(rep.failures.size()) +
                                 " pairs failed verification (see verify_report.json)");
    }
    return 0;
}

int cmd_analyze_prob(const std::string& dataset, const std::string& model_dir,
                     const std::string& out_dir, int k_cycles, std::size_t limit, unsigned threads) {
    require_exists(dataset, "dataset file");
    require_exists(model_dir, "model directory");
    const Model model = Model::load_dir(model_dir);
    const std::vector<PromptPair> pairs = load_pairs(dataset, limit);
    verify_or_throw(model, pairs, threads);

    std::vector<CycleMetricSeries> natural(pairs.size()), icl(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        natural[i] = per_cycle_series(model, pairs[i], Condition::kNatural, k_cycles);
        icl[i] = per_cycle_series(model, pairs[i], Condition::kIcl, k_cycles);
    });
    const AggregateSeries agg_nat = aggregate(natural);
    const AggregateSeries agg_icl = aggregate(icl);
    if (agg_nat.ragged || agg_icl.ragged) {
        std::cerr << "warning: ragged cycle counts; aligned on the shortest common count\n";
    }

    std::ostringstream csv;
    csv << "condition,cycle_index,mean_prob,p5_prob,p95_prob,mean_entropy,p5_entropy,p95_entropy\n";
    for (const auto* agg : {&agg_nat, &agg_icl}) {
        for (const AggregateRow& r : agg->rows) {
            csv << condition_name(agg->condition) << "," << r.cycle << "," << num(r.mean_prob) << ","
                << num(r.p5_prob) << "," << num(r.p95_prob) << "," << num(r.mean_entropy) << ","
                << num(r.p5_entropy) << "," << num(r.p95_entropy) << "\n";
        }
    }
    fs::create_directories(out_dir);
    write_text_atomic((fs::path(out_dir) / "prob_entropy.csv").string(), csv.str());
    write_text_atomic((fs::path(out_dir) / "prob_entropy.svg").string(),
                      fig_prob_entropy(agg_nat, agg_icl));
    write_manifest(out_dir, "analyze-prob", 0, json{{"dataset", dataset}, {"model", model_dir}},
                   json{{"cycles", k_cycles},
                        {"limit", limit},
                        {"pairs", pairs.size()},
                        {"icl_cycle0", "first_occurrence"},
                        {"entropy_units", "nats"},
                        {"model_id", model.config().model_id}},
                   {"prob_entropy.csv", "prob_entropy.svg"});
    std::cout << "analyzed " << pairs.size() << " pairs over " << agg_nat.rows.size() << " cycles\n";
    return 0;
}

int cmd_train_lens(const std::string& model_dir, const std::string& corpus, const std::string& out_dir,
                   std::size_t samples, int max_len, const LensTrainOptions& opts) {
    require_exists(corpus, "corpus file");
    require_exists(model_dir, "model directory");
    const Model model = Model::load_dir(model_dir);
    const Vocab vocab = load_vocab(model, model_dir);

    std::vector<TokenSequence> sequences;
    for (const std::string& line : read_corpus_lines(corpus, samples)) {
        if (line.empty()) continue;
        TokenSequence seq = vocab.encode(max_len > 0 ? truncate_scalars(line, static_cast<std::size_t>(max_len))
                                                     : line);
        if (!seq.ids.empty()) sequences.push_back(std::move(seq));
    }
    if (sequences.empty()) throw std::runtime_error("lens corpus has no usable lines: " + corpus);

    LensTrainStats stats;
    const LensSet lenses = train_lenses(model, sequences, opts, &stats);

    fs::create_directories(out_dir);
    save_lenses(lenses, (fs::path(out_dir) / "lenses.safetensors").string());

    json per_head = json::array();
    for (const HeadLens& lens : lenses.lenses) {
        per_head.push_back({{"layer", lens.layer}, {"head", lens.head}, {"final_kl", lens.final_kl}});
    }
    write_text_atomic((fs::path(out_dir) / "lens_training.json").string(),
                      json{{"samples", stats.samples},
                           {"steps", stats.steps},
                           {"init_layer_kl", stats.init_layer_kl},
                           {"final_layer_kl", stats.final_layer_kl},
                           {"heads", per_head}}
                              .dump(2) +
                          "\n");
    write_manifest(out_dir, "train-lens", opts.seed, json{{"corpus", corpus}, {"model", model_dir}},
                   json{{"samples", samples},
                        {"learning_rate", opts.learning_rate},
                        {"batch_size", opts.batch_size},
                        {"epochs", opts.epochs},
                        {"share_per_layer", opts.share_per_layer},
                        {"max_len", max_len},
                        {"model_id", model.config().model_id}},
                   {"lenses.safetensors", "lens_training.json"});

    double mean_init = 0.0, mean_final = 0.0;
    for (const double v : stats.init_layer_kl) mean_init += v / stats.init_layer_kl.size();
    for (const double v : stats.final_layer_kl) mean_final += v / stats.final_layer_kl.size();
    std::cout << "trained " << lenses.lenses.size() << " lenses over " << stats.steps
              << " steps; mean KL " << num(mean_init) << " -> " << num(mean_final) << "\n";
    return 0;
}

int cmd_attribute_heads(const std::string& dataset, const std::string& model_dir,
                        const std::string& lens_file, const std::string& out_dir, int k_cycles,
                        std::size_t limit, unsigned threads) {
    require_exists(dataset, "dataset file");
    require_exists(model_dir, "model directory");
    require_exists(lens_file, "lens file");
    const Model model = Model::load_dir(model_dir);
    const std::vector<PromptPair> pairs = load_pairs(dataset, limit);
    verify_or_throw(model, pairs, threads);
    const LensSet lenses = load_lenses(lens_file, model);

    const TrajectorySet natural =
        head_trajectories(model, lenses, pairs, Condition::kNatural, k_cycles, threads);
    const TrajectorySet icl = head_trajectories(model, lenses, pairs, Condition::kIcl, k_cycles, threads);

    std::ostringstream csv;
    csv << "condition,layer,head,cycle,contrast\n";
    for (const auto* t : {&natural, &icl}) {
        for (const ContrastTrajectory& head : t->heads) {
            for (std::size_t c = 0; c < head.contrast.size(); ++c) {
                if (head.count[c] == 0) continue;
                csv << condition_name(t->condition) << "," << head.layer << "," << head.head << "," << c
                    << "," << num(head.contrast[c]) << "\n";
            }
        }
    }
    fs::create_directories(out_dir);
    write_text_atomic((fs::path(out_dir) / "trajectories.csv").string(), csv.str());
    write_text_atomic((fs::path(out_dir) / "trajectories.svg").string(), fig_trajectories(natural, icl));

    auto rank_json = [](const TrajectorySet& t) {
        json j;
        j["top2"] = json::array();
        j["bottom2"] = json::array();
        for (const auto& [l, h] : t.top2) j["top2"].push_back({{"layer", l}, {"head", h}});
        for (const auto& [l, h] : t.bottom2) j["bottom2"].push_back({{"layer", l}, {"head", h}});
        return j;
    };
    write_text_atomic((fs::path(out_dir) / "attribution.json").string(),
                      json{{"natural", rank_json(natural)}, {"icl", rank_json(icl)},
                           {"pairs", pairs.size()}, {"cycles", k_cycles}}
                              .dump(2) +
                          "\n");
    write_manifest(out_dir, "attribute-heads", 0,
                   json{{"dataset", dataset}, {"model", model_dir}, {"lenses", lens_file}},
                   json{{"cycles", k_cycles}, {"limit", limit}, {"pairs", pairs.size()},
                        {"model_id", model.config().model_id}},
                   {"trajectories.csv", "trajectories.svg", "attribution.json"});
    std::cout << "attributed " << natural.heads.size() << " heads over " << pairs.size() << " pairs\n";
    return 0;
}

int cmd_perturb(const std::string& dataset, const std::string& model_dir, const std::string& out_dir,
                const SweepOptions& opts, std::size_t limit) {
    require_exists(dataset, "dataset file");
    require_exists(model_dir, "model directory");
    const Model model = Model::load_dir(model_dir);
    const std::vector<PromptPair> pairs = load_pairs(dataset, limit);
    verify_or_throw(model, pairs, opts.threads);

    const SweepResult result = sweep(model, pairs, opts);

    std::ostringstream csv;
    csv << "condition,cycles_in_prompt,p,proportion_repetitive,mean_rouge_l,count\n";
    for (const SweepCell& c : result.aggregates) {
        csv << condition_name(c.condition) << "," << c.cycles_in_prompt << "," << num(c.p) << ","
            << num(c.proportion_repetitive) << "," << num(c.mean_rouge) << "," << c.count << "\n";
    }
    fs::create_directories(out_dir);
    write_text_atomic((fs::path(out_dir) / "perturb.csv").string(), csv.str());
    write_text_atomic((fs::path(out_dir) / "perturb.svg").string(), fig_perturb(result.aggregates));
    write_manifest(out_dir, "perturb", opts.seed,
                   json{{"dataset", dataset}, {"model", model_dir}},
                   json{{"p_grid", opts.p_grid},
                        {"cycle_grid", opts.cycle_grid},
                        {"max_new", opts.max_new},
                        {"samples_per_prompt", opts.samples_per_prompt},
                        {"limit", limit},
                        {"pairs", pairs.size()},
                        {"skipped_overflow", result.skipped_overflow},
                        {"model_id", model.config().model_id}},
                   {"perturb.csv", "perturb.svg"});
    std::cout << "swept " << result.records.size() << " cells (" << result.skipped_overflow
              << " skipped for context overflow)\n";
    return 0;
}

int cmd_report(const std::string& dir) {
    require_exists(dir, "report directory");
    write_text_atomic((fs::path(dir) / "report.html").string(), build_report_html(dir));
    std::cout << "wrote " << (fs::path(dir) / "report.html").string() << "\n";
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"analysis toolkit for repetition loops in GPT-NeoX-family language models"};
    app.require_subcommand(1);

    // toy-model
    auto* toy = app.add_subcommand("toy-model", "write a deterministic fixture model");
    std::uint64_t toy_seed = 7;
    std::string toy_out = "toy-model";
    toy->add_option("--seed", toy_seed, "weight seed");
    toy->add_option("--out", toy_out, "output directory")->required();

    // build-dataset
    auto* build = app.add_subcommand("build-dataset", "build the natural/ICL prompt-pair dataset");
    std::string b_corpus, b_model = default_model_dir(), b_out = "dataset.jsonl";
    std::size_t b_lines = 0;
    BuildOptions b_opts;
    build->add_option("--corpus", b_corpus, "line-delimited UTF-8 corpus")->required();
    build->add_option("--model", b_model, "model directory (or LOOPSCOPE_MODEL_DIR)");
    build->add_option("--lines", b_lines, "max corpus lines (0 = all)");
    build->add_option("--out", b_out, "dataset output file (JSONL)")->required();
    build->add_option("--max-new", b_opts.max_new, "greedy generation budget");
    build->add_option("--min-cycle-len", b_opts.min_cycle_len, "minimum cycle length");
    build->add_option("--min-reps", b_opts.min_reps, "minimum complete repetitions");
    build->add_option("--threads", b_opts.threads, "worker threads (0 = auto)");

    // verify
    auto* verify = app.add_subcommand("verify", "re-check the pairing invariant of a dataset");
    std::string v_dataset, v_model = default_model_dir(), v_out;
    unsigned v_threads = 0;
    verify->add_option("--dataset", v_dataset, "dataset file")->required();
    verify->add_option("--model", v_model, "model directory (or LOOPSCOPE_MODEL_DIR)");
    verify->add_option("--out", v_out, "report directory (default: alongside the dataset)");
    verify->add_option("--threads", v_threads, "worker threads (0 = auto)");

    // analyze-prob
    auto* prob = app.add_subcommand("analyze-prob", "per-cycle probability and entropy traces");
    std::string p_dataset, p_model = default_model_dir(), p_out = "out";
    int p_cycles = 10;
    std::size_t p_limit = 0;
    unsigned p_threads = 0;
    prob->add_option("--dataset", p_dataset, "dataset file")->required();
    prob->add_option("--model", p_model, "model directory (or LOOPSCOPE_MODEL_DIR)");
    prob->add_option("--out", p_out, "output directory")->required();
    prob->add_option("--cycles", p_cycles, "cycles to score (index 0 is the input)");
    prob->add_option("--limit", p_limit, "use only the first N pairs (0 = all)");
    prob->add_option("--threads", p_threads, "worker threads (0 = auto)");

    // train-lens
    auto* lens = app.add_subcommand("train-lens", "train per-head affine translators");
    std::string l_model = default_model_dir(), l_corpus, l_out = "out";
    std::size_t l_samples = 10000;
    int l_max_len = 0;
    LensTrainOptions l_opts;
    lens->add_option("--model", l_model, "model directory (or LOOPSCOPE_MODEL_DIR)");
    lens->add_option("--corpus", l_corpus, "training corpus, disjoint from the analysis dataset")
        ->required();
    lens->add_option("--out", l_out, "output directory")->required();
    lens->add_option("--samples", l_samples, "training sequences to draw from the corpus");
    lens->add_option("--max-len", l_max_len, "truncate corpus lines to this many characters (0 = off)");
    lens->add_option("--lr", l_opts.learning_rate, "SGD learning rate");
    lens->add_option("--batch", l_opts.batch_size, "SGD batch size");
    lens->add_option("--epochs", l_opts.epochs, "epochs over the sample");
    lens->add_option("--seed", l_opts.seed, "shuffle seed");
    lens->add_option("--eval-samples", l_opts.eval_samples, "subset size for KL bookkeeping");
    lens->add_flag("--share-per-layer", l_opts.share_per_layer, "one lens per layer instead of per head");
    lens->add_option("--threads", l_opts.threads, "worker threads (0 = auto)");

    // attribute-heads
    auto* attr = app.add_subcommand("attribute-heads", "contrast trajectories for every head");
    std::string a_dataset, a_model = default_model_dir(), a_lenses, a_out = "out";
    int a_cycles = 8;
    std::size_t a_limit = 0;
    unsigned a_threads = 0;
    attr->add_option("--dataset", a_dataset, "dataset file")->required();
    attr->add_option("--model", a_model, "model directory (or LOOPSCOPE_MODEL_DIR)");
    attr->add_option("--lenses", a_lenses, "trained lens archive")->required();
    attr->add_option("--out", a_out, "output directory")->required();
    attr->add_option("--cycles", a_cycles, "cycle indices 0..k-1 (0 is the input)");
    attr->add_option("--limit", a_limit, "use only the first N pairs (0 = all)");
    attr->add_option("--threads", a_threads, "worker threads (0 = auto)");

    // perturb
    auto* pert = app.add_subcommand("perturb", "top-p sampling sweep");
    std::string s_dataset, s_model = default_model_dir(), s_out = "out";
    std::size_t s_limit = 0;
    SweepOptions s_opts;
    std::vector<double> s_pgrid;
    std::vector<int> s_cycles;
    pert->add_option("--dataset", s_dataset, "dataset file")->required();
    pert->add_option("--model", s_model, "model directory (or LOOPSCOPE_MODEL_DIR)");
    pert->add_option("--out", s_out, "output directory")->required();
    pert->add_option("--p-grid", s_pgrid, "p values")->delimiter(',');
    pert->add_option("--cycles", s_cycles, "extra prompt cycles")->delimiter(',');
    pert->add_option("--seed", s_opts.seed, "sweep seed");
    pert->add_option("--max-new", s_opts.max_new, "sampled tokens per cell");
    pert->add_option("--samples", s_opts.samples_per_prompt, "samples per (pair, condition, c, p)");
    pert->add_option("--limit", s_limit, "use only the first N pairs (0 = all)");
    pert->add_option("--threads", s_opts.threads, "worker threads (0 = auto)");

    // report
    auto* rep = app.add_subcommand("report", "assemble report.html from analysis outputs");
    std::string r_dir;
    rep->add_option("--dir", r_dir, "directory holding the analysis outputs")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
        std::cerr << app.help();
        return 2;
    }

    try {
        if (toy->parsed()) return cmd_toy_model(toy_seed, toy_out);
        if (build->parsed()) return cmd_build_dataset(b_corpus, b_model, b_lines, b_out, b_opts);
        if (verify->parsed()) return cmd_verify(v_dataset, v_model, v_out, v_threads);
        if (prob->parsed()) return cmd_analyze_prob(p_dataset, p_model, p_out, p_cycles, p_limit, p_threads);
        if (lens->parsed()) return cmd_train_lens(l_model, l_corpus, l_out, l_samples, l_max_len, l_opts);
        if (attr->parsed()) {
            return cmd_attribute_heads(a_dataset, a_model, a_lenses, a_out, a_cycles, a_limit, a_threads);
        }
        if (pert->parsed()) {
            if (!s_pgrid.empty()) s_opts.p_grid = s_pgrid;
            if (!s_cycles.empty()) s_opts.cycle_grid = s_cycles;
            return cmd_perturb(s_dataset, s_model, s_out, s_opts, s_limit);
        }
        if (rep->parsed()) return cmd_report(r_dir);
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace loopscope
