#include "relpos/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "relpos/errors.hpp"
#include "relpos/format.hpp"

namespace relpos {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& text, const std::string& key) {
    T v{};
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (text.empty() || ec != std::errc() || ptr != last)
        throw ConfigError("invalid value for '" + key + "': '" + text + "'");
    return v;
}

bool parse_bool(const std::string& text, const std::string& key) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("invalid boolean for '" + key + "': '" + text + "'");
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> parts;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(trim(item));
    return parts;
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"layers", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.layers = parse_number<std::size_t>(v, k); }},
        {"heads", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.heads = parse_number<std::size_t>(v, k); }},
        {"d_model", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.d_model = parse_number<std::size_t>(v, k); }},
        {"d_head", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.d_head = parse_number<std::size_t>(v, k); }},
        {"max_len", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.max_len = parse_number<std::size_t>(v, k); }},
        {"d_ff", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.d_ff = parse_number<std::size_t>(v, k); }},
        {"vocab", [](RunConfig& c, const std::string& v, const std::string& k) {
             c.model.vocab = parse_number<std::size_t>(v, k);
             c.task.vocab = c.model.vocab;
         }},
        {"method", [](RunConfig& c, const std::string& v, const std::string&) { c.model.method.kind = parse_method_kind(v); }},
        {"k", [](RunConfig& c, const std::string& v, const std::string& k) {
             if (v == "none") c.model.method.clip_k.reset();
             else c.model.method.clip_k = parse_number<int>(v, k);
         }},
        {"xlnet_bias", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.method.xlnet_bias_enabled = parse_bool(v, k); }},
        {"saturate", [](RunConfig& c, const std::string& v, const std::string& k) { c.model.method.saturate = parse_bool(v, k); }},
        {"dtype", [](RunConfig& c, const std::string& v, const std::string& k) {
             if (v == "f64") c.model.dtype = DType::f64;
             else if (v == "f32") c.model.dtype = DType::f32;
             else throw ConfigError("invalid value for '" + k + "': '" + v + "'");
         }},
        {"task", [](RunConfig& c, const std::string& v, const std::string&) { c.task.kind = parse_task_kind(v); }},
        {"offset", [](RunConfig& c, const std::string& v, const std::string& k) { c.task.offset = parse_number<std::int64_t>(v, k); }},
        {"mask_rate", [](RunConfig& c, const std::string& v, const std::string& k) { c.task.mask_rate = parse_number<double>(v, k); }},
        {"transition_strength", [](RunConfig& c, const std::string& v, const std::string& k) { c.task.transition_strength = parse_number<double>(v, k); }},
        {"table_seed", [](RunConfig& c, const std::string& v, const std::string& k) { c.task.table_seed = parse_number<std::uint64_t>(v, k); }},
        {"train_len_lo", [](RunConfig& c, const std::string& v, const std::string& k) { c.task.train_len_lo = parse_number<std::size_t>(v, k); }},
        {"train_len_hi", [](RunConfig& c, const std::string& v, const std::string& k) { c.task.train_len_hi = parse_number<std::size_t>(v, k); }},
        {"eval_lens", [](RunConfig& c, const std::string& v, const std::string& k) { c.task.eval_lens = parse_size_list(v, k); }},
        {"optimizer", [](RunConfig& c, const std::string& v, const std::string&) { c.train.optimizer.kind = parse_optimizer_kind(v); }},
        {"lr", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.optimizer.lr = parse_number<double>(v, k); }},
        {"momentum", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.optimizer.momentum = parse_number<double>(v, k); }},
        {"beta1", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.optimizer.beta1 = parse_number<double>(v, k); }},
        {"beta2", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.optimizer.beta2 = parse_number<double>(v, k); }},
        {"eps", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.optimizer.eps = parse_number<double>(v, k); }},
        {"steps", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.steps = parse_number<std::size_t>(v, k); }},
        {"batch", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.batch = parse_number<std::size_t>(v, k); }},
        {"eval_every", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.eval_every = parse_number<std::size_t>(v, k); }},
        {"eval_sequences", [](RunConfig& c, const std::string& v, const std::string& k) { c.train.eval_sequences = parse_number<std::size_t>(v, k); }},
        {"seed", [](RunConfig& c, const std::string& v, const std::string& k) {
             c.seed = parse_number<std::uint64_t>(v, k);
             c.train.seed = c.seed;
         }},
        {"out", [](RunConfig& c, const std::string& v, const std::string&) { c.out_dir = v; }},
        {"workers", [](RunConfig& c, const std::string& v, const std::string& k) { c.workers = parse_number<std::size_t>(v, k); }},
        {"sweep_ks", [](RunConfig& c, const std::string& v, const std::string& k) { c.sweep_ks = parse_int_list(v, k); }},
        {"sweep_seeds", [](RunConfig& c, const std::string& v, const std::string& k) {
             c.sweep_seeds.clear();
             for (auto s : parse_size_list(v, k)) c.sweep_seeds.push_back(s);
         }},
    };
    return table;
}

}  // namespace

std::vector<std::size_t> parse_size_list(const std::string& csv, const std::string& key) {
    std::vector<std::size_t> out;
    for (const auto& part : split_csv(csv)) out.push_back(parse_number<std::size_t>(part, key));
    if (out.empty()) throw ConfigError("'" + key + "' needs at least one value");
    return out;
}

std::vector<int> parse_int_list(const std::string& csv, const std::string& key) {
    std::vector<int> out;
    for (const auto& part : split_csv(csv)) out.push_back(parse_number<int>(part, key));
    if (out.empty()) throw ConfigError("'" + key + "' needs at least one value");
    return out;
}

void RunConfig::validate() const {
    model.validate();
    task.validate();
    if (task.vocab != model.vocab) throw ConfigError("task vocab differs from model vocab");
    if (train.steps == 0) throw ConfigError("steps must be positive");
    if (train.batch == 0) throw ConfigError("batch must be positive");
    if (train.eval_every == 0) throw ConfigError("eval_every must be positive");
    if (train.eval_sequences == 0) throw ConfigError("eval_sequences must be positive");
    if (!(train.optimizer.lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(train.optimizer.beta1 >= 0.0 && train.optimizer.beta1 < 1.0) ||
        !(train.optimizer.beta2 >= 0.0 && train.optimizer.beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(train.optimizer.eps > 0.0)) throw ConfigError("eps must be positive");
    if (workers == 0) throw ConfigError("workers must be positive");
    if (train.seed != seed) throw ConfigError("training seed must match the run seed");
    if (task.train_len_hi > model.max_len && model.method.kind == MethodKind::absolute)
        throw ConfigError("absolute positions cannot train beyond max_len");
    if (sweep_ks.empty() || sweep_seeds.empty()) throw ConfigError("sweep lists must be non-empty");
}

std::string RunConfig::to_text() const {
    std::map<std::string, std::string> kv = model.to_kv();
    kv["task"] = task_kind_name(task.kind);
    kv["offset"] = std::to_string(task.offset);
    kv["mask_rate"] = format_double(task.mask_rate);
    kv["transition_strength"] = format_double(task.transition_strength);
    kv["table_seed"] = std::to_string(task.table_seed);
    kv["train_len_lo"] = std::to_string(task.train_len_lo);
    kv["train_len_hi"] = std::to_string(task.train_len_hi);
    kv["eval_lens"] = join(task.eval_lens);
    kv["optimizer"] = optimizer_kind_name(train.optimizer.kind);
    kv["lr"] = format_double(train.optimizer.lr);
    kv["momentum"] = format_double(train.optimizer.momentum);
    kv["beta1"] = format_double(train.optimizer.beta1);
    kv["beta2"] = format_double(train.optimizer.beta2);
    kv["eps"] = format_double(train.optimizer.eps);
    kv["steps"] = std::to_string(train.steps);
    kv["batch"] = std::to_string(train.batch);
    kv["eval_every"] = std::to_string(train.eval_every);
    kv["eval_sequences"] = std::to_string(train.eval_sequences);
    kv["seed"] = std::to_string(seed);
    kv["out"] = out_dir.string();
    kv["workers"] = std::to_string(workers);
    kv["sweep_ks"] = join(sweep_ks);
    kv["sweep_seeds"] = join(sweep_seeds);
    std::string text;
    for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
    return text;
}

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return kv;
}

void apply_settings(RunConfig& config, const std::map<std::string, std::string>& settings) {
    const auto& table = setters();
    for (const auto& [key, value] : settings) {
        auto it = table.find(key);
        if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second(config, value, key);
    }
}

RunConfig load_run_config(const std::filesystem::path* file, const std::map<std::string, std::string>& overrides) {
    RunConfig config;
    std::map<std::string, std::string> settings;
    if (file != nullptr) {
        std::ifstream in(*file);
        if (!in) throw ConfigError("cannot read config file " + file->string());
        std::stringstream buf;
        buf << in.rdbuf();
        settings = parse_kv_text(buf.str());
    }
    for (const auto& [k, v] : overrides) settings[k] = v;
    // max_len first so method defaults can depend on it, then the method, then the rest.
    auto take = [&](const std::string& key) {
        if (auto it = settings.find(key); it != settings.end()) {
            apply_settings(config, {{key, it->second}});
            settings.erase(it);
        }
    };
    take("max_len");
    if (auto it = settings.find("method"); it != settings.end()) {
        config.model.method = default_method(parse_method_kind(it->second), config.model.max_len);
        settings.erase(it);
    } else {
        config.model.method = default_method(config.model.method.kind, config.model.max_len);
    }
    apply_settings(config, settings);
    config.validate();
    return config;
}

}  // namespace relpos
