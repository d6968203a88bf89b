#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "relpos/checkpoint.hpp"
#include "relpos/checks.hpp"
#include "relpos/config.hpp"
#include "relpos/errors.hpp"
#include "relpos/format.hpp"
#include "relpos/tasks.hpp"

namespace relpos::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::map<std::string, std::string> overrides;
    std::vector<std::string> sets;
};

struct Options {
    CommonFlags common;
    std::string checkpoint;
    std::string tokens_file;
    std::size_t layer = 0;
    std::size_t head = 0;
    bool cross_check = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "key = value config file");
    auto flag = [&](const char* name, const char* key, const char* help) {
        cmd->add_option_function<std::string>(
            name, [&f, key](const std::string& v) { f.overrides[key] = v; }, help);
    };
    flag("--method", "method", "absolute|sinusoid|shaw|xlnet|method1..method4");
    flag("--k", "k", "clipping distance (or 'none')");
    flag("--seed", "seed", "run seed");
    flag("--max-len", "max_len", "maximum trained length n");
    flag("--eval-lens", "eval_lens", "comma-separated evaluation lengths");
    flag("--out", "out", "output directory");
    flag("--workers", "workers", "concurrent sweep workers");
    cmd->add_option("--set", f.sets, "extra key=value override (repeatable)");
}

RunConfig effective_config(const CommonFlags& f, const std::map<std::string, std::string>& base = {}) {
    std::map<std::string, std::string> overrides = base;
    std::map<std::string, std::string> from_file;
    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        if (!in) throw ConfigError("cannot read config file " + f.config_path);
        std::stringstream buf;
        buf << in.rdbuf();
        from_file = parse_kv_text(buf.str());
    }
    for (const auto& [k, v] : from_file) overrides[k] = v;
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto& [k, v] : f.overrides) overrides[k] = v;
    return load_run_config(nullptr, overrides);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

fs::path prepare_out(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    write_file(cfg.out_dir / "config.txt", cfg.to_text());
    return cfg.out_dir;
}

json epoch_json(const EpochMetrics& em) {
    json acc = json::object();
    for (const auto& [len, a] : em.accuracy) acc[std::to_string(len)] = a;
    return {{"step", em.step}, {"loss", em.loss}, {"accuracy", acc}};
}

std::string metrics_csv(const RunMetrics& m, const std::vector<std::size_t>& lens) {
    std::string csv = "step,loss";
    for (auto len : lens) csv += ",acc_" + std::to_string(len);
    csv += "\n";
    for (const auto& em : m.epochs) {
        csv += std::to_string(em.step) + "," + format_double(em.loss);
        for (auto len : lens) {
            auto it = em.accuracy.find(len);
            csv += "," + (it == em.accuracy.end() ? std::string() : format_double(it->second));
        }
        csv += "\n";
    }
    return csv;
}

// Trains a fresh model under the config and writes metrics, timing and the checkpoint.
Encoder train_and_record(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    Encoder model(cfg.model, cfg.seed);
    std::ofstream jsonl(out_dir / "metrics.jsonl", std::ios::binary);
    auto metrics = train(model, cfg.task, cfg.train, [&](const EpochMetrics& em) {
        jsonl << epoch_json(em).dump() << "\n";
        out << "step " << em.step << " loss " << format_double(em.loss);
        for (const auto& [len, a] : em.accuracy) out << " acc@" << len << " " << format_double(a);
        out << "\n";
    });
    jsonl << json{{"summary", true},
                  {"param_count", metrics.param_count},
                  {"position_param_count", metrics.position_param_count},
                  {"final_step", metrics.final().step}}
                 .dump()
          << "\n";
    jsonl.close();
    write_file(out_dir / "metrics.csv", metrics_csv(metrics, cfg.task.eval_lens));
    write_file(out_dir / "timing.json", json{{"wall_clock_s", metrics.wall_clock_s}}.dump() + "\n");
    save_checkpoint(model, cfg.seed, out_dir / "checkpoint.bin");
    return model;
}

int cmd_paramcount(const Options& o, std::ostream& out) {
    // Defaults to BERT-base dimensions; flags and config files still take precedence.
    const std::map<std::string, std::string> bert = {
        {"layers", "12"}, {"heads", "12"}, {"d_model", "768"}, {"d_head", "64"}, {"max_len", "512"}, {"d_ff", "3072"}};
    const RunConfig cfg = effective_config(o.common, bert);
    const auto& c = cfg.model;
    out << "m=" << c.layers << " h=" << c.heads << " n=" << c.max_len << " d_z=" << c.d_head << " d_x=" << c.d_model
        << "\n";
    out << std::left << std::setw(10) << "method" << std::setw(22) << "formula" << "count\n";
    bool ok = true;
    for (auto kind : all_method_kinds()) {
        PositionMethod method = default_method(kind, c.max_len);
        if (kind == MethodKind::xlnet) method.xlnet_bias_enabled = c.method.kind == kind && c.method.xlnet_bias_enabled;
        const std::size_t d = kind == MethodKind::absolute ? c.d_model : c.d_head;
        const auto count = param_count(method, c.layers, c.heads, c.max_len, d);
        out << std::setw(10) << method_kind_name(kind) << std::setw(22) << param_count_formula(method) << count;
        if (o.cross_check) {
            EncoderConfig live = c;
            live.method = method;
            live.d_ff = 1;
            live.vocab = 2;
            const auto built = Encoder(live, cfg.seed).position_param_count();
            out << "  live=" << built << (built == count ? " ok" : " MISMATCH");
            ok = ok && built == count;
        }
        out << "\n";
    }
    return ok ? kOk : kNumeric;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
    const RunConfig cfg = effective_config(o.common);
    const auto kind = cfg.model.method.kind;
    bool ok = true;
    auto report = [&](const char* scope, const std::vector<GradCheckResult>& results) {
        for (const auto& r : group_results(results)) {
            const bool pass = r.max_rel_error < kGradTolerance;
            ok = ok && pass;
            out << scope << " " << std::left << std::setw(10) << r.name << " coords=" << std::setw(5) << r.coords
                << " max_rel_err=" << std::scientific << std::setprecision(3) << r.max_rel_error
                << std::defaultfloat << (pass ? " PASS" : " FAIL") << "\n";
        }
    };
    out << "method " << method_kind_name(kind) << ", tolerance " << kGradTolerance << "\n";
    if (is_relative(kind)) report("logits ", logit_gradcheck(kind, cfg.seed));
    report("encoder", encoder_gradcheck(kind, cfg.seed));
    out << (ok ? "gradcheck PASS\n" : "gradcheck FAIL\n");
    return ok ? kOk : kNumeric;
}

int cmd_equivalence(const Options& o, std::ostream& out) {
    const RunConfig cfg = effective_config(o.common);
    constexpr double kFormsTol = 1e-10;
    constexpr double kInitTol = 1e-12;
    bool ok = true;
    const double diff = m4_forms_max_diff(100, cfg.seed);
    const bool forms_ok = diff <= kFormsTol;
    ok = ok && forms_ok;
    out << "method4 direct vs rewritten form, 100 instances: max|diff|=" << format_double(diff)
        << (forms_ok ? " PASS" : " FAIL") << "\n";
    for (const auto& c : identity_init_checks(cfg.seed)) {
        const bool pass = c.max_abs_diff <= kInitTol;
        ok = ok && pass;
        out << "identity init " << std::left << std::setw(8) << method_kind_name(c.kind)
            << " max|e - qk/sqrt(d)|=" << format_double(c.max_abs_diff) << (pass ? " PASS" : " FAIL") << "\n";
    }
    return ok ? kOk : kNumeric;
}

int cmd_train(const Options& o, std::ostream& out) {
    const RunConfig cfg = effective_config(o.common);
    const auto dir = prepare_out(cfg);
    train_and_record(cfg, dir, out);
    out << "wrote " << (dir / "metrics.jsonl").string() << " and " << (dir / "checkpoint.bin").string() << "\n";
    return kOk;
}

LoadedCheckpoint require_checkpoint(const Options& o) {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    return load_checkpoint(fs::path(o.checkpoint));
}

int cmd_eval(const Options& o, std::ostream& out) {
    RunConfig cfg = effective_config(o.common);
    auto loaded = require_checkpoint(o);
    if (loaded.model.config().vocab != cfg.task.vocab)
        throw ConfigError("checkpoint vocab differs from task vocab " + std::to_string(cfg.task.vocab));
    const auto dir = prepare_out(cfg);
    std::ofstream jsonl(dir / "eval.jsonl", std::ios::binary);
    std::string csv = "length,accuracy\n";
    for (auto len : cfg.task.eval_lens) {
        const double acc = evaluate(loaded.model, cfg.task, len, cfg.train.eval_sequences, cfg.seed);
        jsonl << json{{"length", len}, {"accuracy", acc}}.dump() << "\n";
        csv += std::to_string(len) + "," + format_double(acc) + "\n";
        out << "acc@" << len << " " << format_double(acc) << "\n";
    }
    write_file(dir / "eval.csv", csv);
    return kOk;
}

int cmd_extrapolate(const Options& o, std::ostream& out) {
    const RunConfig cfg = effective_config(o.common);
    const auto dir = prepare_out(cfg);
    std::optional<Encoder> model;
    if (o.checkpoint.empty()) model.emplace(train_and_record(cfg, dir, out));
    else model.emplace(std::move(require_checkpoint(o).model));
    const auto outcomes = extrapolate_eval(*model, cfg.task, cfg.train.eval_sequences, cfg.seed);
    std::ofstream jsonl(dir / "extrapolate.jsonl", std::ios::binary);
    std::string csv = "length,accuracy,outcome\n";
    for (const auto& [len, res] : outcomes) {
        json j{{"length", len}};
        const std::string outcome = res.accuracy ? "ok" : (res.capacity_error ? "capacity_error" : "error");
        j["outcome"] = outcome;
        if (res.accuracy) j["accuracy"] = *res.accuracy;
        else j["error"] = res.error;
        jsonl << j.dump() << "\n";
        csv += std::to_string(len) + "," + (res.accuracy ? format_double(*res.accuracy) : std::string()) + "," +
               outcome + "\n";
        out << "L=" << len << " " << (res.accuracy ? format_double(*res.accuracy) : outcome + ": " + res.error)
            << "\n";
    }
    write_file(dir / "extrapolate.csv", csv);
    return kOk;
}

int cmd_sweep_k(const Options& o, std::ostream& out) {
    const RunConfig cfg = effective_config(o.common);
    const auto dir = prepare_out(cfg);
    const auto result = sweep_k(cfg.model, cfg.sweep_ks, cfg.task, cfg.train, cfg.sweep_seeds, cfg.workers);
    std::string csv = "k";
    for (auto s : cfg.sweep_seeds) csv += ",seed_" + std::to_string(s);
    csv += ",mean";
    for (auto len : cfg.task.eval_lens) csv += ",mean_acc_" + std::to_string(len);
    csv += "\n";
    std::ofstream jsonl(dir / "sweep_k.jsonl", std::ios::binary);
    for (const auto& row : result.rows) {
        csv += std::to_string(row.k);
        for (double a : row.accuracy) csv += "," + format_double(a);
        csv += "," + format_double(row.mean);
        json by_len = json::object();
        for (auto len : cfg.task.eval_lens) {
            auto it = row.mean_by_len.find(len);
            csv += "," + (it == row.mean_by_len.end() ? std::string() : format_double(it->second));
            if (it != row.mean_by_len.end()) by_len[std::to_string(len)] = it->second;
        }
        csv += "\n";
        jsonl << json{{"k", row.k}, {"accuracy", row.accuracy}, {"mean", row.mean}, {"mean_by_len", by_len}}.dump()
              << "\n";
        out << "k=" << row.k << " mean=" << format_double(row.mean) << "\n";
    }
    write_file(dir / "sweep_k.csv", csv);
    return kOk;
}

std::vector<std::size_t> read_tokens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read tokens file " + path);
    std::vector<std::size_t> tokens;
    std::string word;
    while (in >> word) {
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
        if (ec != std::errc() || ptr != word.data() + word.size())
            throw ConfigError("tokens file: '" + word + "' is not a token id");
        tokens.push_back(v);
    }
    if (tokens.empty()) throw ConfigError("tokens file " + path + " is empty");
    return tokens;
}

int cmd_export_attn(const Options& o, std::ostream& out) {
    const RunConfig cfg = effective_config(o.common);
    if (o.tokens_file.empty()) throw UsageError("--tokens is required");
    auto loaded = require_checkpoint(o);
    const auto tokens = read_tokens(o.tokens_file);
    const auto dir = prepare_out(cfg);
    const Tensor att = export_attention(loaded.model, tokens, o.layer);
    write_file(dir / "attention.csv", matrix_csv(att, "query", "key_"));
    out << "wrote " << (dir / "attention.csv").string() << "\n";
    if (!loaded.model.has_rel_table()) {
        out << "method " << method_kind_name(loaded.model.config().method.kind)
            << " has no relative table; embedding weights skipped\n";
        return kOk;
    }
    const auto& table = loaded.model.rel_table();
    if (o.head >= table.heads()) throw BoundsError("head " + std::to_string(o.head) + " out of range");
    const std::int64_t lo = std::max<std::int64_t>(-50, table.min_offset());
    const std::int64_t hi = std::min<std::int64_t>(50, table.max_offset());
    write_file(dir / "embedding_weights.csv",
               embedding_weights_csv(table.export_weights(o.layer, o.head, lo, hi), lo));
    out << "wrote " << (dir / "embedding_weights.csv").string() << " (offsets " << lo << ".." << hi << ")\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Relative position embeddings for self-attention"};
    app.name("relpos");
    app.require_subcommand(1);
    Options o;
    auto* paramcount = app.add_subcommand("paramcount", "position parameter counts per method");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    auto* equivalence = app.add_subcommand("equivalence", "method4 form equivalence and identity-init checks");
    auto* train_cmd = app.add_subcommand("train", "train a model, write metrics and checkpoint");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint at the eval lengths");
    auto* sweep = app.add_subcommand("sweep-k", "accuracy versus clipping distance");
    auto* extrapolate = app.add_subcommand("extrapolate", "evaluate beyond the trained lengths");
    auto* export_attn = app.add_subcommand("export-attn", "attention and embedding-weight CSVs");
    for (auto* cmd : {paramcount, gradcheck, equivalence, train_cmd, eval_cmd, sweep, extrapolate, export_attn})
        add_common(cmd, o.common);
    paramcount->add_flag("--cross-check", o.cross_check, "also count a live model's parameters");
    for (auto* cmd : {eval_cmd, extrapolate, export_attn})
        cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    export_attn->add_option("--tokens", o.tokens_file, "whitespace-separated token ids");
    export_attn->add_option("--layer", o.layer, "layer index");
    export_attn->add_option("--head", o.head, "head for the embedding-weight export");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }

    try {
        if (paramcount->parsed()) return cmd_paramcount(o, out);
        if (gradcheck->parsed()) return cmd_gradcheck(o, out);
        if (equivalence->parsed()) return cmd_equivalence(o, out);
        if (train_cmd->parsed()) return cmd_train(o, out);
        if (eval_cmd->parsed()) return cmd_eval(o, out);
        if (sweep->parsed()) return cmd_sweep_k(o, out);
        if (extrapolate->parsed()) return cmd_extrapolate(o, out);
        if (export_attn->parsed()) return cmd_export_attn(o, out);
    } catch (const CapacityError& e) {
        err << "capacity error: " << e.what() << "\n";
        return kCapacity;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const TrainingError& e) {
        err << "training error: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }
    return kValidation;
}

}  // namespace relpos::cli
