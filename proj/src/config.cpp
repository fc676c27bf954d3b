#include "dsa/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "dsa/error.hpp"

namespace dsa {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: value of '" + key + "' is not a number: " + value);
    }
}

long long to_int(const std::string& key, const std::string& value) {
    long long v = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size())
        throw ConfigError("config: value of '" + key + "' is not an integer: " + value);
    return v;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"task",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "pair") c.model.task = TaskKind::kPair;
             else if (v == "single") c.model.task = TaskKind::kSingle;
             else throw ConfigError("config: '" + k + "' must be pair or single");
         }},
        {"attention.kind",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "dsa") c.model.attention = AttentionKind::kDsa;
             else if (v == "static") c.model.attention = AttentionKind::kStatic;
             else throw ConfigError("config: '" + k + "' must be dsa or static");
         }},
        {"attention.heads",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.dsa.heads = static_cast<int>(to_int(k, v));
         }},
        {"attention.dim",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.dsa.head_dim = static_cast<int>(to_int(k, v));
         }},
        {"attention.iterations",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.dsa.iterations = static_cast<int>(to_int(k, v));
         }},
        {"attention.static_dim",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.static_attn_dim = static_cast<int>(to_int(k, v));
         }},
        {"encoder.d0",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.d0 = static_cast<int>(to_int(k, v));
         }},
        {"encoder.d1",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.d1 = static_cast<int>(to_int(k, v));
         }},
        {"encoder.dl",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.dl = static_cast<int>(to_int(k, v));
         }},
        {"encoder.layers",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.layers = static_cast<int>(to_int(k, v));
         }},
        {"encoder.k1",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.k1 = static_cast<int>(to_int(k, v));
         }},
        {"encoder.k2",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.k2 = static_cast<int>(to_int(k, v));
         }},
        {"encoder.dc",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.dc = static_cast<int>(to_int(k, v));
         }},
        {"encoder.dropout",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.dropout = to_double(k, v);
         }},
        {"encoder.leaky_slope",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.encoder.leaky_slope = to_double(k, v);
         }},
        {"embedding.dropout",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.embedding_dropout = to_double(k, v);
         }},
        {"classifier.hidden_units",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.classifier.hidden_units = static_cast<int>(to_int(k, v));
         }},
        {"classifier.hidden_layers",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.classifier.hidden_layers = static_cast<int>(to_int(k, v));
         }},
        {"classifier.dropout",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.classifier.dropout = to_double(k, v);
         }},
        {"classifier.classes",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.model.classifier.classes = static_cast<int>(to_int(k, v));
         }},
        {"optim.algo",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v != "adam" && v != "adadelta")
                 throw ConfigError("config: '" + k + "' must be adam or adadelta");
             c.optimizer = v;
         }},
        {"optim.lr",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.lr = to_double(k, v); }},
        {"optim.l2",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.l2 = to_double(k, v); }},
        {"optim.rho",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.adadelta_rho = to_double(k, v); }},
        {"schedule.patience",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.patience = to_double(k, v); }},
        {"schedule.trigger",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.patience_steps = static_cast<int>(to_int(k, v));
         }},
        {"train.batch_size",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.batch_size = static_cast<int>(to_int(k, v));
         }},
        {"train.max_epochs",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.max_epochs = static_cast<int>(to_int(k, v));
         }},
        {"train.early_stop_acc",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.early_stop_acc = to_double(k, v);
         }},
        {"data.train",
         [](RunConfig& c, const std::string&, const std::string& v) { c.train_path = v; }},
        {"data.eval",
         [](RunConfig& c, const std::string&, const std::string& v) { c.eval_path = v; }},
        {"data.vectors",
         [](RunConfig& c, const std::string&, const std::string& v) { c.vectors_path = v; }},
        {"data.oov_bound",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.oov_bound = to_double(k, v); }},
        {"seed",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.seed = static_cast<unsigned long long>(to_int(k, v));
         }},
        {"threads",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.threads = static_cast<int>(to_int(k, v));
         }},
        {"precision",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v != "double" && v != "single")
                 throw ConfigError("config: '" + k + "' must be double or single");
             c.precision = v;
         }},
        {"output.dir",
         [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
    };
    return table;
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    if (optimizer != "adam" && optimizer != "adadelta")
        throw ConfigError("config: optimizer must be adam or adadelta");
    if (!(lr > 0.0)) throw ConfigError("config: learning rate must be positive");
    if (l2 < 0.0) throw ConfigError("config: l2 coefficient must be non-negative");
    if (patience < 0.0) throw ConfigError("config: patience must be non-negative");
    if (patience_steps < 1) throw ConfigError("config: schedule trigger must be at least 1");
    if (batch_size < 1) throw ConfigError("config: batch size must be at least 1");
    if (max_epochs < 1) throw ConfigError("config: epoch limit must be at least 1");
    if (threads < 1) throw ConfigError("config: thread count must be at least 1");
    if (precision != "double" && precision != "single")
        throw ConfigError("config: precision must be double or single");
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config:" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = setters().find(key);
        if (it == setters().end())
            throw ConfigError("config:" + std::to_string(line_no) + ": unknown key '" + key + "'");
        it->second(cfg, key, value);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& c) {
    std::ostringstream out;
    out << "task = " << (c.model.task == TaskKind::kPair ? "pair" : "single") << "\n";
    out << "attention.kind = " << (c.model.attention == AttentionKind::kDsa ? "dsa" : "static") << "\n";
    out << "attention.heads = " << c.model.dsa.heads << "\n";
    out << "attention.dim = " << c.model.dsa.head_dim << "\n";
    out << "attention.iterations = " << c.model.dsa.iterations << "\n";
    out << "attention.static_dim = " << c.model.static_attn_dim << "\n";
    out << "encoder.d0 = " << c.model.encoder.d0 << "\n";
    out << "encoder.d1 = " << c.model.encoder.d1 << "\n";
    out << "encoder.dl = " << c.model.encoder.dl << "\n";
    out << "encoder.layers = " << c.model.encoder.layers << "\n";
    out << "encoder.k1 = " << c.model.encoder.k1 << "\n";
    out << "encoder.k2 = " << c.model.encoder.k2 << "\n";
    out << "encoder.dc = " << c.model.encoder.dc << "\n";
    out << "encoder.dropout = " << fmt_double(c.model.encoder.dropout) << "\n";
    out << "encoder.leaky_slope = " << fmt_double(c.model.encoder.leaky_slope) << "\n";
    out << "embedding.dropout = " << fmt_double(c.model.embedding_dropout) << "\n";
    out << "classifier.hidden_units = " << c.model.classifier.hidden_units << "\n";
    out << "classifier.hidden_layers = " << c.model.classifier.hidden_layers << "\n";
    out << "classifier.dropout = " << fmt_double(c.model.classifier.dropout) << "\n";
    out << "classifier.classes = " << c.model.classifier.classes << "\n";
    out << "optim.algo = " << c.optimizer << "\n";
    out << "optim.lr = " << fmt_double(c.lr) << "\n";
    out << "optim.l2 = " << fmt_double(c.l2) << "\n";
    out << "optim.rho = " << fmt_double(c.adadelta_rho) << "\n";
    out << "schedule.patience = " << fmt_double(c.patience) << "\n";
    out << "schedule.trigger = " << c.patience_steps << "\n";
    out << "train.batch_size = " << c.batch_size << "\n";
    out << "train.max_epochs = " << c.max_epochs << "\n";
    out << "train.early_stop_acc = " << fmt_double(c.early_stop_acc) << "\n";
    out << "data.train = " << c.train_path << "\n";
    out << "data.eval = " << c.eval_path << "\n";
    out << "data.vectors = " << c.vectors_path << "\n";
    out << "data.oov_bound = " << fmt_double(c.oov_bound) << "\n";
    out << "seed = " << c.seed << "\n";
    out << "threads = " << c.threads << "\n";
    out << "precision = " << c.precision << "\n";
    out << "output.dir = " << c.output_dir << "\n";
    return out.str();
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config file: " + path);
    out << serialize_run_config(cfg);
}

}  // namespace dsa
