// comptrack: synthetic-LiDAR single-object tracking pipeline.
//   gen    - generate synthetic sequences (.bin frames + gt.csv)
//   train  - train a tracker, write a CTK1 checkpoint + metrics log
//   track  - run the frame-by-frame tracker over one sequence
//   eval   - OPE Success/Precision + compression/entropy diagnostics
//   bench  - MAC counts and wall times, compressed vs uncompressed
//   ablate - fusion x tau x baseline matrix
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "comptrack/config.hpp"
#include "comptrack/checkpoint.hpp"
#include "comptrack/scene.hpp"
#include "comptrack/tracker.hpp"
#include "comptrack/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace comptrack;
using Clock = std::chrono::steady_clock;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
};

Config load_config(const CommonOpts& opts) {
    Config cfg;
    if (!opts.config_path.empty()) cfg = Config::from_file(opts.config_path);
    for (const std::string& kv : opts.overrides) cfg.apply_line(kv, "--set " + kv);
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "key = value config file");
    cmd->add_option("--set", opts.overrides, "inline override, e.g. --set tau=0.95")
        ->take_all();
}

std::vector<std::string> sequence_dirs(const std::string& root) {
    if (!fs::is_directory(root)) throw DataError("not a directory: " + root);
    std::vector<std::string> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "gt.csv"))
            dirs.push_back(entry.path().string());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw DataError("no sequence directories under " + root);
    return dirs;
}

std::vector<Sequence> load_dataset(const std::string& root) {
    std::vector<Sequence> out;
    for (const std::string& dir : sequence_dirs(root)) out.push_back(load_sequence(dir));
    return out;
}

struct EvalSummary {
    double success = 0.0;
    double precision = 0.0;
    double mean_k = 0.0;
    double mean_n = 0.0;
    double entropy_before = 0.0;
    double entropy_after = 0.0;
    double forward_ms = 0.0;
    json per_sequence = json::array();
};

EvalSummary evaluate_dataset(const CompTrackModel& model, const std::vector<Sequence>& seqs,
                             const std::vector<std::string>* names = nullptr) {
    EvalSummary sum;
    long frames = 0;
    for (size_t s = 0; s < seqs.size(); ++s) {
        const auto t0 = Clock::now();
        const InferenceResult inf = infer_sequence(model, seqs[s]);
        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count() /
                          std::max<size_t>(1, inf.boxes.size());
        const std::vector<Box3D> gt(seqs[s].gt_boxes.begin() + 1, seqs[s].gt_boxes.end());
        const OpeReport rep = evaluate_ope(inf.boxes, gt);
        double k = 0, n = 0, eb = 0, ea = 0;
        for (const FrameStats& st : inf.stats) {
            k += st.effective_k;
            n += st.token_count;
            eb += st.entropy_before;
            ea += st.entropy_after;
            ++frames;
        }
        const double cnt = static_cast<double>(inf.stats.size());
        json row;
        row["seq"] = names ? (*names)[s] : std::to_string(s);
        row["frames"] = inf.boxes.size();
        row["success"] = rep.success;
        row["precision"] = rep.precision;
        row["mean_k"] = k / cnt;
        row["mean_n"] = n / cnt;
        row["entropy_before_bits"] = eb / cnt;
        row["entropy_after_bits"] = ea / cnt;
        sum.per_sequence.push_back(row);
        sum.success += rep.success;
        sum.precision += rep.precision;
        sum.mean_k += k;
        sum.mean_n += n;
        sum.entropy_before += eb;
        sum.entropy_after += ea;
        sum.forward_ms += ms;
    }
    const double ns = static_cast<double>(seqs.size());
    sum.success /= ns;
    sum.precision /= ns;
    sum.forward_ms /= ns;
    sum.mean_k /= frames;
    sum.mean_n /= frames;
    sum.entropy_before /= frames;
    sum.entropy_after /= frames;
    return sum;
}

void write_sidecar(const std::string& artifact, const std::string& text) {
    std::ofstream os(artifact + ".log");
    os << text;
}

int run_gen(const CommonOpts& common, const std::string& out_dir, int n, int seed) {
    const Config cfg = load_config(common);
    fs::create_directories(out_dir);
    for (int i = 0; i < n; ++i) {
        const Sequence seq =
            generate_sequence(static_cast<std::uint64_t>(seed) + i, cfg.scene);
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%05d", i);
        save_sequence((fs::path(out_dir) / name).string(), seq);
    }
    std::cout << "gen: wrote " << n << " sequences to " << out_dir << "\n";
    return 0;
}

int run_train(const CommonOpts& common, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& metrics_path) {
    const Config cfg = load_config(common);
    const std::vector<Sequence> dataset = load_dataset(data_dir);
    CompTrackModel model(cfg.model);
    const auto t0 = Clock::now();
    const TrainResult result = train(model, dataset, cfg.train);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    save_checkpoint(out_ckpt, model.params());
    const std::string metrics = metrics_path.empty() ? out_ckpt + ".metrics.csv" : metrics_path;
    {
        std::ofstream os(metrics);
        os << "epoch,mean_loss,mean_pred_loss,mean_track_loss,lr\n";
        char line[160];
        for (const EpochLog& log : result.log) {
            std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g\n", log.epoch,
                          log.mean_loss, log.mean_pred_loss, log.mean_track_loss, log.lr);
            os << line;
        }
    }
    write_sidecar(out_ckpt, "train wall seconds: " + std::to_string(secs) + "\n");
    std::cout << "train: " << result.steps << " steps over " << dataset.size()
              << " sequences; final loss "
              << (result.log.empty() ? 0.0 : result.log.back().mean_loss) << "; wrote "
              << out_ckpt << "\n";
    return 0;
}

int run_track(const CommonOpts& common, const std::string& seq_dir, const std::string& ckpt,
              const std::string& out_csv, const std::string& heatmap_dir) {
    const Config cfg = load_config(common);
    CompTrackModel model(cfg.model);
    load_checkpoint(ckpt, model.params());
    const Sequence seq = load_sequence(seq_dir);
    const InferenceResult inf = infer_sequence(model, seq, !heatmap_dir.empty());
    write_box_csv(out_csv, inf.boxes, /*first_index=*/1);
    if (!heatmap_dir.empty()) {
        fs::create_directories(heatmap_dir);
        const GridGeometry geom = cfg.model.grid();
        char name[48];
        for (size_t t = 0; t < inf.stats.size(); ++t) {
            if (inf.stats[t].heatmap.empty()) continue;
            std::snprintf(name, sizeof(name), "heatmap_%06zu.pgm", t + 1);
            write_pgm((fs::path(heatmap_dir) / name).string(), inf.stats[t].heatmap,
                      geom.height, geom.width);
        }
    }
    std::cout << "track: wrote " << inf.boxes.size() << " predictions to " << out_csv << "\n";
    return 0;
}

int run_eval(const CommonOpts& common, const std::string& data_dir, const std::string& ckpt,
             const std::string& out_jsonl) {
    const Config cfg = load_config(common);
    CompTrackModel model(cfg.model);
    load_checkpoint(ckpt, model.params());
    const std::vector<std::string> dirs = sequence_dirs(data_dir);
    std::vector<Sequence> seqs;
    std::vector<std::string> names;
    for (const std::string& d : dirs) {
        seqs.push_back(load_sequence(d));
        names.push_back(fs::path(d).filename().string());
    }
    const EvalSummary sum = evaluate_dataset(model, seqs, &names);
    std::ofstream os(out_jsonl);
    if (!os) throw DataError("cannot write " + out_jsonl);
    for (const auto& row : sum.per_sequence) os << row.dump() << "\n";
    json summary;
    summary["summary"] = true;
    summary["sequences"] = seqs.size();
    summary["success"] = sum.success;
    summary["precision"] = sum.precision;
    summary["mean_k"] = sum.mean_k;
    summary["mean_n"] = sum.mean_n;
    summary["entropy_before_bits"] = sum.entropy_before;
    summary["entropy_after_bits"] = sum.entropy_after;
    os << summary.dump() << "\n";
    write_sidecar(out_jsonl,
                  "mean forward ms/frame: " + std::to_string(sum.forward_ms) + "\n");
    std::cout << "eval: success " << sum.success << " precision " << sum.precision
              << " mean_K " << sum.mean_k << " mean_N " << sum.mean_n << "\n";
    return 0;
}

// Micro-benchmark of the compression + head stages on one frame's tokens.
struct AttentionBench {
    std::uint64_t macs = 0;
    double wall_ms = 0.0;
};

AttentionBench bench_attention_head(const CompTrackModel& model, const RawBevGrid& tgrid,
                                    const RawBevGrid& sgrid, int reps) {
    AttentionBench out;
    Tape probe;
    const ForwardResult fwd = model.forward(probe, tgrid, sgrid, /*padded=*/false);
    if (fwd.empty_foreground) return out;
    const auto stage_macs = probe.macs_by_stage();
    for (const auto& [stage, macs] : stage_macs)
        if (stage == "compression" || stage == "head") out.macs += macs;
    const CompressionPlan frozen = fwd.plan;
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
        Tape t;
        (void)model.forward(t, tgrid, sgrid, /*padded=*/false, &frozen);
    }
    const auto t1 = Clock::now();
    // Subtract the shared pillar+SFP portion measured on its own.
    Tape shared;
    const int f_t = model.project_grid(shared, tgrid);
    const auto s0 = Clock::now();
    for (int r = 0; r < reps; ++r) {
        Tape t;
        const int a = model.project_grid(t, tgrid);
        const int b = model.project_grid(t, sgrid);
        const int cat = t.concat_cols(a, b);
        (void)sfp_forward(t, model.params(), cat, sgrid.geom.height, sgrid.geom.width,
                          model.config().channels);
    }
    const auto s1 = Clock::now();
    (void)f_t;
    const double full = std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
    const double shared_ms = std::chrono::duration<double, std::milli>(s1 - s0).count() / reps;
    out.wall_ms = std::max(0.0, full - shared_ms);
    return out;
}

int run_bench(const CommonOpts& common, const std::string& data_dir, const std::string& ckpt,
              const std::string& ckpt_uncompressed, const std::string& out_json, int reps) {
    const Config cfg = load_config(common);
    Config unc_cfg = cfg;
    unc_cfg.model.compression = CompressionMode::kUncompressed;

    CompTrackModel compressed(cfg.model);
    if (!ckpt.empty()) load_checkpoint(ckpt, compressed.params());
    CompTrackModel uncompressed(unc_cfg.model);
    if (!ckpt_uncompressed.empty()) load_checkpoint(ckpt_uncompressed, uncompressed.params());

    const std::vector<Sequence> seqs = load_dataset(data_dir);
    const GridGeometry geom = cfg.model.grid();

    json report;
    std::uint64_t comp_macs = 0, unc_macs = 0;
    double comp_ms = 0, unc_ms = 0, eb = 0, ea = 0;
    long frames = 0, k_sum = 0, n_sum = 0;
    for (const Sequence& seq : seqs) {
        const RawBevGrid tgrid =
            pillarize(crop_search_region(seq.frames[0], seq.gt_boxes[0], cfg.scene.object_class),
                      geom);
        for (size_t t = 1; t < seq.length(); ++t) {
            const PointCloud crop =
                crop_search_region(seq.frames[t], seq.gt_boxes[t - 1], cfg.scene.object_class);
            if (crop.size() == 0) continue;
            const RawBevGrid sgrid = pillarize(crop, geom);
            const AttentionBench cb = bench_attention_head(compressed, tgrid, sgrid, reps);
            const AttentionBench ub = bench_attention_head(uncompressed, tgrid, sgrid, reps);
            comp_macs += cb.macs;
            unc_macs += ub.macs;
            comp_ms += cb.wall_ms;
            unc_ms += ub.wall_ms;
            Tape probe;
            const ForwardResult fwd = compressed.forward(probe, tgrid, sgrid, false);
            k_sum += fwd.plan.k;
            n_sum += fwd.plan.selection.count();
            const double p_before =
                static_cast<double>(sgrid.occupied_cells()) / geom.cells();
            const double hfg = estimate_fg_entropy(sgrid.features, sgrid.occupancy);
            eb += bev_entropy_bits(p_before, hfg, geom.height, geom.width);
            ea += bev_entropy_bits(
                static_cast<double>(fwd.plan.selection.count()) / geom.cells(), hfg,
                geom.height, geom.width);
            ++frames;
        }
    }
    if (frames == 0) throw DataError("bench: no usable frames in " + data_dir);
    report["frames"] = frames;
    report["grid"] = {geom.height, geom.width, cfg.model.channels};
    report["mean_k"] = static_cast<double>(k_sum) / frames;
    report["mean_n"] = static_cast<double>(n_sum) / frames;
    report["compressed_attention_head_macs_per_frame"] =
        static_cast<double>(comp_macs) / frames;
    report["uncompressed_attention_head_macs_per_frame"] =
        static_cast<double>(unc_macs) / frames;
    report["mac_ratio"] = static_cast<double>(unc_macs) / std::max<std::uint64_t>(1, comp_macs);
    report["entropy_before_bits"] = eb / frames;
    report["entropy_after_bits"] = ea / frames;
    {
        std::ofstream os(out_json);
        if (!os) throw DataError("cannot write " + out_json);
        os << report.dump(2) << "\n";
    }
    const double wall_ratio = comp_ms > 0 ? unc_ms / comp_ms : 0.0;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "attention+head wall ms/frame: compressed %.4f uncompressed %.4f ratio %.2f\n",
                  comp_ms / frames, unc_ms / frames, wall_ratio);
    write_sidecar(out_json, buf);
    std::cout << "bench: mac_ratio " << report["mac_ratio"] << ", " << buf;
    return 0;
}

int run_ablate(const CommonOpts& common, const std::string& train_dir,
               const std::string& eval_dir, const std::string& out_csv) {
    const Config base = load_config(common);
    const std::vector<Sequence> train_set = load_dataset(train_dir);
    const std::vector<Sequence> eval_set = load_dataset(eval_dir);

    struct Cell {
        std::string variant;
        std::string tau;  // empty for baselines
        Config cfg;
    };
    std::vector<Cell> cells;
    for (FusionMode fusion : {FusionMode::kAddition, FusionMode::kLearnableOnly,
                              FusionMode::kSvdOnly, FusionMode::kConcatLinear}) {
        for (double tau : {0.95, 0.99, 0.999}) {
            Config cfg = base;
            cfg.model.compression = CompressionMode::kIbdtc;
            cfg.model.fusion = fusion;
            cfg.model.tau = tau;
            char tau_str[16];
            std::snprintf(tau_str, sizeof(tau_str), "%.3f", tau);
            cells.push_back({fusion_name(fusion), tau_str, cfg});
        }
    }
    for (CompressionMode mode : {CompressionMode::kUniformGrid, CompressionMode::kRandomDrop,
                                 CompressionMode::kFixedK}) {
        Config cfg = base;
        cfg.model.compression = mode;
        cells.push_back({compression_name(mode), "", cfg});
    }

    std::ofstream os(out_csv);
    if (!os) throw DataError("cannot write " + out_csv);
    os << "variant,tau,mean_K,success,precision,forward_ms,error\n";
    for (const Cell& cell : cells) {
        std::string error;
        double mean_k = 0, success = 0, precision = 0, forward_ms = 0;
        try {
            CompTrackModel model(cell.cfg.model);
            train(model, train_set, cell.cfg.train);
            const EvalSummary sum = evaluate_dataset(model, eval_set);
            mean_k = sum.mean_k;
            success = sum.success;
            precision = sum.precision;
            forward_ms = sum.forward_ms;
        } catch (const std::exception& e) {
            error = e.what();
            for (char& c : error)
                if (c == ',' || c == '\n') c = ';';
        }
        char line[512];
        std::snprintf(line, sizeof(line), "%s,%s,%.3f,%.6f,%.6f,%.3f,%s\n",
                      cell.variant.c_str(), cell.tau.c_str(), mean_k, success, precision,
                      forward_ms, error.c_str());
        os << line;
        os.flush();
        std::cout << "ablate: " << cell.variant << (cell.tau.empty() ? "" : " tau=" + cell.tau)
                  << (error.empty() ? " done" : " FAILED: " + error) << "\n";
    }
    std::cout << "ablate: wrote " << cells.size() << " cells to " << out_csv << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CompTrack-style dual-redundancy tracking pipeline"};
    app.require_subcommand(1);

    CommonOpts gen_opts, train_opts, track_opts, eval_opts, bench_opts, ablate_opts;

    auto* gen = app.add_subcommand("gen", "generate synthetic sequences");
    std::string gen_out;
    int gen_n = 10, gen_seed = 1;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--n", gen_n, "number of sequences");
    gen->add_option("--seed", gen_seed, "base seed; sequence i uses seed+i");
    add_common(gen, gen_opts);

    auto* tr = app.add_subcommand("train", "train a tracker");
    std::string tr_data, tr_out, tr_metrics;
    tr->add_option("--data", tr_data, "dataset directory from gen")->required();
    tr->add_option("--out", tr_out, "output checkpoint (CTK1)")->required();
    tr->add_option("--metrics", tr_metrics, "metrics csv (default <out>.metrics.csv)");
    add_common(tr, train_opts);

    auto* tk = app.add_subcommand("track", "track one sequence");
    std::string tk_seq, tk_ckpt, tk_out, tk_heatmaps;
    tk->add_option("--seq", tk_seq, "sequence directory")->required();
    tk->add_option("--ckpt", tk_ckpt, "checkpoint")->required();
    tk->add_option("--out", tk_out, "prediction csv")->required();
    tk->add_option("--dump-heatmaps", tk_heatmaps, "directory for per-frame PGM heatmaps");
    add_common(tk, track_opts);

    auto* ev = app.add_subcommand("eval", "evaluate OPE metrics");
    std::string ev_data, ev_ckpt, ev_out;
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    ev->add_option("--out", ev_out, "output JSON-lines report")->required();
    add_common(ev, eval_opts);

    auto* be = app.add_subcommand("bench", "MACs and latency, compressed vs uncompressed");
    std::string be_data, be_ckpt, be_ckpt_unc, be_out;
    int be_reps = 5;
    be->add_option("--data", be_data, "dataset directory")->required();
    be->add_option("--ckpt", be_ckpt, "compressed-model checkpoint (optional)");
    be->add_option("--ckpt-uncompressed", be_ckpt_unc, "uncompressed-model checkpoint");
    be->add_option("--out", be_out, "output JSON report")->required();
    be->add_option("--reps", be_reps, "timing repetitions per frame");
    add_common(be, bench_opts);

    auto* ab = app.add_subcommand("ablate", "fusion x tau x baseline matrix");
    std::string ab_train, ab_eval, ab_out;
    ab->add_option("--train-data", ab_train, "training dataset directory")->required();
    ab->add_option("--eval-data", ab_eval, "evaluation dataset directory")->required();
    ab->add_option("--out", ab_out, "output csv matrix")->required();
    add_common(ab, ablate_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen(gen_opts, gen_out, gen_n, gen_seed);
        if (tr->parsed()) return run_train(train_opts, tr_data, tr_out, tr_metrics);
        if (tk->parsed()) return run_track(track_opts, tk_seq, tk_ckpt, tk_out, tk_heatmaps);
        if (ev->parsed()) return run_eval(eval_opts, ev_data, ev_ckpt, ev_out);
        if (be->parsed())
            return run_bench(bench_opts, be_data, be_ckpt, be_ckpt_unc, be_out, be_reps);
        if (ab->parsed()) return run_ablate(ablate_opts, ab_train, ab_eval, ab_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
