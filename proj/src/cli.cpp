#include "dsa/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <variant>
#include <vector>

#include "dsa/analysis.hpp"
#include "dsa/checkpoint.hpp"
#include "dsa/data.hpp"
#include "dsa/logging.hpp"
#include "dsa/model.hpp"
#include "dsa/optim.hpp"

namespace dsa::cli {

namespace {

namespace fs = std::filesystem;

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

int guard(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const BatchSizeError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::runtime_error& e) {  // parse/format/io/numeric
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------------------
// Shared model plumbing
// ---------------------------------------------------------------------------

template <typename S>
struct TaskData {
    std::vector<PairIds> pairs;
    std::vector<SentenceIds> sentences;

    std::size_t size() const {
        return pairs.empty() ? sentences.size() : pairs.size();
    }

    std::vector<Batch<S>> batches(const EmbeddingTable<S>& table, Index batch_size, Rng& rng) const {
        return pairs.empty() ? make_sentence_batches(sentences, table, batch_size, rng)
                             : make_pair_batches(pairs, table, batch_size, rng);
    }
};

void collect_tokens(const std::vector<PairExample>& pairs, std::set<std::string>& into) {
    for (const auto& ex : pairs) {
        into.insert(ex.premise.begin(), ex.premise.end());
        into.insert(ex.hypothesis.begin(), ex.hypothesis.end());
    }
}

void collect_tokens(const std::vector<SentenceExample>& sents, std::set<std::string>& into) {
    for (const auto& ex : sents) into.insert(ex.tokens.begin(), ex.tokens.end());
}

template <typename S>
TaskData<S> to_task_ids(const std::vector<PairExample>& pairs, const EmbeddingTable<S>& table) {
    TaskData<S> out;
    for (const auto& ex : pairs) out.pairs.push_back(pair_to_ids(ex, table));
    return out;
}

template <typename S>
TaskData<S> to_task_ids(const std::vector<SentenceExample>& sents, const EmbeddingTable<S>& table) {
    TaskData<S> out;
    for (const auto& ex : sents) out.sentences.push_back(sentence_to_ids(ex, table));
    return out;
}

template <typename S>
struct AccuracyCount {
    long correct = 0;
    long total = 0;
    double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

// Evaluation-mode accuracy. Batches are independent in eval mode (batch norm
// reads running statistics), so threads only change scheduling, not results.
template <typename S>
AccuracyCount<S> dataset_accuracy(const std::vector<Batch<S>>& batches, ModelParams<S>& params,
                                  const ModelConfig& cfg, int threads) {
    AccuracyCount<S> acc;
    acc.total = 0;
    for (const auto& b : batches) acc.total += b.size();
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(batches.size())));
    std::vector<long> correct(static_cast<std::size_t>(workers), 0);
    auto work = [&](int w) {
        for (std::size_t i = static_cast<std::size_t>(w); i < batches.size();
             i += static_cast<std::size_t>(workers)) {
            auto logits = batch_logits(batches[i], params, cfg, Context<S>::eval());
            const auto pred = predict_labels(logits);
            for (std::size_t b = 0; b < pred.size(); ++b)
                if (pred[b] == batches[i].labels[b]) ++correct[static_cast<std::size_t>(w)];
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (long c : correct) acc.correct += c;
    return acc;
}

template <typename S>
struct PreparedRun {
    EmbeddingTable<S> table;
    TaskData<S> train;
    std::optional<TaskData<S>> eval;
};

template <typename S>
PreparedRun<S> prepare_data(const RunConfig& rc, Rng& rng) {
    if (rc.train_path.empty()) throw ConfigError("config: data.train is required for training");
    if (rc.vectors_path.empty()) throw ConfigError("config: data.vectors is required for training");

    std::set<std::string> wanted;
    std::vector<PairExample> train_pairs, eval_pairs;
    std::vector<SentenceExample> train_sents, eval_sents;
    if (rc.model.task == TaskKind::kPair) {
        auto parsed = parse_pair_dataset(rc.train_path);
        if (parsed.examples.empty()) throw ParseError(rc.train_path + ": dataset contains no examples");
        train_pairs = std::move(parsed.examples);
        collect_tokens(train_pairs, wanted);
        if (!rc.eval_path.empty()) {
            eval_pairs = parse_pair_dataset(rc.eval_path).examples;
            collect_tokens(eval_pairs, wanted);
        }
    } else {
        train_sents = parse_sentence_dataset(rc.train_path, rc.model.classifier.classes);
        if (train_sents.empty()) throw ParseError(rc.train_path + ": dataset contains no examples");
        collect_tokens(train_sents, wanted);
        if (!rc.eval_path.empty()) {
            eval_sents = parse_sentence_dataset(rc.eval_path, rc.model.classifier.classes);
            collect_tokens(eval_sents, wanted);
        }
    }

    auto loaded = load_pretrained_vectors<S>(rc.vectors_path, wanted);
    if (loaded.table.dim() != 0 && loaded.table.dim() != rc.model.encoder.d0)
        throw ConfigError("config: vectors file dimension " + std::to_string(loaded.table.dim()) +
                          " does not match encoder.d0 = " + std::to_string(rc.model.encoder.d0));
    if (loaded.table.size() == 0 && loaded.missing.size() == wanted.size())
        loaded.table.vectors.resize(rc.model.encoder.d0, 0);
    init_oov(loaded.table, loaded.missing, rc.oov_bound, rng);
    log_info("vocabulary: " + std::to_string(loaded.table.size()) + " tokens (" +
             std::to_string(loaded.missing.size()) + " initialized as OOV)");

    PreparedRun<S> out;
    out.table = std::move(loaded.table);
    if (rc.model.task == TaskKind::kPair) {
        out.train = to_task_ids(train_pairs, out.table);
        if (!rc.eval_path.empty()) out.eval = to_task_ids(eval_pairs, out.table);
    } else {
        out.train = to_task_ids(train_sents, out.table);
        if (!rc.eval_path.empty()) out.eval = to_task_ids(eval_sents, out.table);
    }
    return out;
}

template <typename S>
using AnyOptimizer = std::variant<Adam<S>, Adadelta<S>>;

template <typename S>
AnyOptimizer<S> make_optimizer(const RunConfig& rc, std::vector<Tensor<S>> params) {
    if (rc.optimizer == "adam") {
        AdamOptions<S> opts;
        opts.lr = static_cast<S>(rc.lr);
        opts.l2 = static_cast<S>(rc.l2);
        return AnyOptimizer<S>(std::in_place_type<Adam<S>>, std::move(params), opts);
    }
    AdadeltaOptions<S> opts;
    opts.lr = static_cast<S>(rc.lr);
    opts.rho = static_cast<S>(rc.adadelta_rho);
    opts.l2 = static_cast<S>(rc.l2);
    return AnyOptimizer<S>(std::in_place_type<Adadelta<S>>, std::move(params), opts);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <typename S>
int train_impl(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    (void)err;
    Rng rng(rc.seed);
    PreparedRun<S> data = prepare_data<S>(rc, rng);

    ModelConfig cfg = rc.model;
    auto params = init_model_params<S>(cfg, rng);
    auto opt = make_optimizer<S>(rc, trainable_params(params, cfg));
    ScheduleState sched;
    sched.patience = rc.patience;
    sched.trigger = rc.patience_steps;

    fs::create_directories(rc.output_dir);
    const std::string log_path = (fs::path(rc.output_dir) / "epochs.tsv").string();
    std::ofstream epoch_log(log_path, std::ios::binary);
    if (!epoch_log) throw IoError("cannot write epoch log: " + log_path);
    epoch_log << "#epoch\ttrain_loss\ttrain_acc\teval_acc\tlr_multiplier\n";

    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double final_train_acc = std::numeric_limits<double>::quiet_NaN();
    double final_eval_acc = std::numeric_limits<double>::quiet_NaN();
    int epochs_run = 0;
    bool early_stopped = false;

    for (int epoch = 1; epoch <= rc.max_epochs && !early_stopped; ++epoch) {
        auto batches = data.train.batches(data.table, rc.batch_size, rng);
        double loss_sum = 0.0;
        long correct = 0, total = 0;
        for (const auto& batch : batches) {
            Tape<S> tape;
            Context<S> ctx = Context<S>::train(tape, rng);
            Tensor<S> logits = batch_logits(batch, params, cfg, ctx);
            Tensor<S> loss = cross_entropy_loss(logits, batch.labels, &tape);
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
            std::visit([](auto& o) { o.zero_grad(); }, opt);
            backward(loss, tape);
            std::visit([&](auto& o) { o.step(sched.lr_multiplier); }, opt);

            loss_sum += loss_value * static_cast<double>(batch.size());
            const auto pred = predict_labels(logits);
            for (std::size_t b = 0; b < pred.size(); ++b)
                if (pred[b] == batch.labels[b]) ++correct;
            total += batch.size();
        }
        const double train_loss = loss_sum / static_cast<double>(total);
        const double train_acc = static_cast<double>(correct) / static_cast<double>(total);

        double eval_acc = std::numeric_limits<double>::quiet_NaN();
        if (data.eval) {
            Rng eval_rng(0);
            auto eval_batches = data.eval->batches(data.table, rc.batch_size, eval_rng);
            eval_acc = dataset_accuracy(eval_batches, params, cfg, rc.threads).value();
        }
        const double mult = lr_halving_update(sched, train_loss);

        std::ostringstream line;
        line << epoch << "\t" << fmt("%.10g", train_loss) << "\t" << fmt("%.10g", train_acc) << "\t"
             << fmt("%.10g", eval_acc) << "\t" << fmt("%.10g", mult);
        epoch_log << line.str() << "\n";
        log_info("epoch " + line.str());

        final_loss = train_loss;
        final_train_acc = train_acc;
        final_eval_acc = eval_acc;
        epochs_run = epoch;

        if (rc.early_stop_acc > 0.0) {
            Rng check_rng(0);
            auto check_batches = data.train.batches(data.table, rc.batch_size, check_rng);
            const double acc = dataset_accuracy(check_batches, params, cfg, rc.threads).value();
            if (acc >= rc.early_stop_acc) {
                log_info("early stop: training accuracy " + fmt("%.10g", acc) + " at epoch " +
                         std::to_string(epoch));
                early_stopped = true;
            }
        }
    }
    epoch_log.close();

    const std::string ckpt_path = (fs::path(rc.output_dir) / "model.ckpt").string();
    write_checkpoint(ckpt_path, build_archive(rc, data.table, params));

    const std::string summary_path = (fs::path(rc.output_dir) / "summary.txt").string();
    std::ofstream summary(summary_path, std::ios::binary);
    if (!summary) throw IoError("cannot write summary: " + summary_path);
    summary << "epochs_run = " << epochs_run << "\n";
    summary << "early_stopped = " << (early_stopped ? "true" : "false") << "\n";
    summary << "final_train_loss = " << fmt("%.17g", final_loss) << "\n";
    summary << "final_train_acc = " << fmt("%.17g", final_train_acc) << "\n";
    summary << "final_eval_acc = " << fmt("%.17g", final_eval_acc) << "\n";
    summary << "lr_multiplier = " << fmt("%.17g", sched.lr_multiplier) << "\n";
    summary << "param_count = " << param_count(cfg) << "\n";
    summary.close();

    out << "checkpoint\t" << ckpt_path << "\n";
    out << "epochs\t" << epochs_run << "\n";
    out << "train_loss\t" << fmt("%.10g", final_loss) << "\n";
    out << "train_acc\t" << fmt("%.10g", final_train_acc) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// checkpoint-consuming commands
// ---------------------------------------------------------------------------

template <typename S>
int eval_impl(const CheckpointArchive& archive, const std::string& data_path, const std::string& report_path,
              std::ostream& out) {
    auto restored = restore_model<S>(archive);
    const ModelConfig& cfg = restored.config.model;

    const DatasetKind kind = sniff_dataset_kind(data_path);
    const DatasetKind want = cfg.task == TaskKind::kPair ? DatasetKind::kPair : DatasetKind::kSingle;
    if (kind != want)
        throw ConfigError("eval: dataset layout does not match the checkpoint's task (" +
                          std::string(cfg.task == TaskKind::kPair ? "pair" : "single") + ")");

    TaskData<S> data;
    if (cfg.task == TaskKind::kPair) {
        auto parsed = parse_pair_dataset(data_path);
        if (parsed.examples.empty()) throw ParseError(data_path + ": dataset contains no examples");
        data = to_task_ids(parsed.examples, restored.table);
    } else {
        auto parsed = parse_sentence_dataset(data_path, cfg.classifier.classes);
        if (parsed.empty()) throw ParseError(data_path + ": dataset contains no examples");
        data = to_task_ids(parsed, restored.table);
    }
    Rng rng(0);
    auto batches = data.batches(restored.table, 64, rng);
    const auto acc = dataset_accuracy(batches, restored.params, cfg, restored.config.threads);

    out << "accuracy\t" << fmt("%.10g", acc.value()) << "\n";
    out << "correct\t" << acc.correct << "\n";
    out << "total\t" << acc.total << "\n";
    if (!report_path.empty()) {
        std::ofstream report(report_path, std::ios::binary);
        if (!report) throw IoError("cannot write report: " + report_path);
        report << "accuracy\t" << fmt("%.10g", acc.value()) << "\n";
        report << "correct\t" << acc.correct << "\n";
        report << "total\t" << acc.total << "\n";
    }
    return kExitOk;
}

template <typename S>
int encode_impl(const CheckpointArchive& archive, const std::string& in_path, const std::string& out_path,
                std::ostream& err) {
    auto restored = restore_model<S>(archive);
    std::ifstream in(in_path);
    if (!in) throw IoError("cannot open sentences file: " + in_path);
    std::ofstream out_file(out_path, std::ios::binary);
    if (!out_file) throw IoError("cannot write embeddings file: " + out_path);

    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto tokens = tokenize(line);
        if (tokens.empty()) {
            err << "warning: " << in_path << ":" << line_no << ": empty line skipped\n";
            continue;
        }
        const auto ids = restored.table.to_ids(tokens);
        Tensor<S> emb = encode_sentence<S>(ids, restored.table, restored.params, restored.config.model,
                                           Context<S>::eval());
        for (Index i = 0; i < emb.size(); ++i)
            out_file << (i ? "," : "") << fmt("%.17g", static_cast<double>(emb.vec()(i)));
        out_file << "\n";
    }
    return kExitOk;
}

template <typename S>
int analyze_impl(const CheckpointArchive& archive, const std::string& in_path, const std::string& mode,
                 const std::string& out_dir, std::ostream& out, std::ostream& err) {
    auto restored = restore_model<S>(archive);
    const ModelConfig& cfg = restored.config.model;

    std::ifstream in(in_path);
    if (!in) throw IoError("cannot open sentences file: " + in_path);
    std::vector<std::vector<Index>> sentences;
    std::vector<std::vector<std::string>> token_lists;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto tokens = tokenize(line);
        if (tokens.empty()) {
            err << "warning: " << in_path << ":" << line_no << ": empty line skipped\n";
            continue;
        }
        sentences.push_back(restored.table.to_ids(tokens));
        token_lists.push_back(tokens);
    }
    if (sentences.empty()) throw ParseError(in_path + ": no sentences to analyze");
    fs::create_directories(out_dir);

    if (mode == "pca") {
        if (cfg.attention != AttentionKind::kDsa || cfg.dsa.iterations < 2)
            throw ConfigError("analyze: pca mode needs routing attention with at least 2 iterations");
        Eigen::MatrixXd vectors =
            collect_dynamic_vectors(sentences, restored.table, restored.params, cfg, 0);
        PcaResult pca = pca_2d(vectors);
        const std::string csv = (fs::path(out_dir) / "dynamic_vectors.csv").string();
        export_pca_scatter(pca, csv);
        out << "points\t" << pca.projected.rows() << "\n";
        out << "explained_variance_1\t" << fmt("%.10g", pca.explained(0)) << "\n";
        out << "explained_variance_2\t" << fmt("%.10g", pca.explained(1)) << "\n";
        out << "scatter\t" << csv << "\n";
        return kExitOk;
    }
    if (mode == "attn") {
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            AttentionTrace<S> trace;
            encode_sentence<S>(sentences[i], restored.table, restored.params, cfg, Context<S>::eval(),
                               &trace);
            char name[32];
            std::snprintf(name, sizeof(name), "attention_%03zu.json", i);
            export_attention_map(token_lists[i], trace, (fs::path(out_dir) / name).string());
        }
        out << "attention_maps\t" << sentences.size() << "\n";
        out << "directory\t" << out_dir << "\n";
        return kExitOk;
    }
    throw ConfigError("analyze: mode must be pca or attn");
}

int with_precision(const std::string& precision, const std::function<int(double)>& as_double,
                   const std::function<int(float)>& as_single) {
    if (precision == "single") return as_single(0.0f);
    return as_double(0.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// public entry points
// ---------------------------------------------------------------------------

int run_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        cfg.validate();
        return with_precision(
            cfg.precision, [&](double) { return train_impl<double>(cfg, out, err); },
            [&](float) { return train_impl<float>(cfg, out, err); });
    });
}

int run_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& report_path,
             std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        const CheckpointArchive archive = read_checkpoint(ckpt_path);
        const RunConfig cfg = parse_run_config(archive.config_text);
        return with_precision(
            cfg.precision, [&](double) { return eval_impl<double>(archive, data_path, report_path, out); },
            [&](float) { return eval_impl<float>(archive, data_path, report_path, out); });
    });
}

int run_encode(const std::string& ckpt_path, const std::string& in_path, const std::string& out_path,
               std::ostream& out, std::ostream& err) {
    (void)out;
    return guard(err, [&] {
        const CheckpointArchive archive = read_checkpoint(ckpt_path);
        const RunConfig cfg = parse_run_config(archive.config_text);
        return with_precision(
            cfg.precision, [&](double) { return encode_impl<double>(archive, in_path, out_path, err); },
            [&](float) { return encode_impl<float>(archive, in_path, out_path, err); });
    });
}

int run_analyze(const std::string& ckpt_path, const std::string& in_path, const std::string& mode,
                const std::string& out_dir, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        const CheckpointArchive archive = read_checkpoint(ckpt_path);
        const RunConfig cfg = parse_run_config(archive.config_text);
        return with_precision(
            cfg.precision,
            [&](double) { return analyze_impl<double>(archive, in_path, mode, out_dir, out, err); },
            [&](float) { return analyze_impl<float>(archive, in_path, mode, out_dir, out, err); });
    });
}

int run_params(const std::string& config_path, std::ostream& out, std::ostream& err) {
    return guard(err, [&] {
        const RunConfig cfg = load_run_config(config_path);
        cfg.validate();
        const ParamBreakdown bd = param_breakdown(cfg.model);
        bool encoder_done = false;
        for (const auto& [name, count] : bd.items) {
            if (!encoder_done && name.rfind("classifier", 0) == 0) {
                out << "encoder_subtotal\t" << bd.encoder_subtotal << "\n";
                encoder_done = true;
            }
            out << name << "\t" << count << "\n";
        }
        if (!encoder_done) out << "encoder_subtotal\t" << bd.encoder_subtotal << "\n";
        out << "classifier_subtotal\t" << bd.classifier_subtotal << "\n";
        out << "total\t" << bd.total << "\n";
        return kExitOk;
    });
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"dynamic self-attention sentence encoder"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, data_path, in_path, out_path, mode, out_dir, report_path;
    long long seed_override = -1;
    int threads_override = 0;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "run configuration file")->required();
    train->add_option("--threads", threads_override, "worker threads for evaluation passes");
    train->add_option("--seed", seed_override, "override the config seed");

    auto* eval = app.add_subcommand("eval", "report accuracy of a checkpoint on a dataset");
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_path, "dataset file")->required();
    eval->add_option("--out", report_path, "also write the report to this file");

    auto* encode = app.add_subcommand("encode", "write sentence embeddings as CSV");
    encode->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    encode->add_option("--in", in_path, "sentences, one per line")->required();
    encode->add_option("--out", out_path, "output CSV file")->required();

    auto* analyze = app.add_subcommand("analyze", "dynamic-vector PCA or attention-map export");
    analyze->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    analyze->add_option("--in", in_path, "sentences, one per line")->required();
    analyze->add_option("--mode", mode, "pca or attn")->required();
    analyze->add_option("--out", out_dir, "output directory")->required();

    auto* params = app.add_subcommand("params", "parameter-count report for a config");
    params->add_option("--config", config_path, "run configuration file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitConfig;
    }

    if (train->parsed()) {
        return guard(err, [&] {
            RunConfig cfg = load_run_config(config_path);
            if (seed_override >= 0) cfg.seed = static_cast<unsigned long long>(seed_override);
            if (threads_override > 0) cfg.threads = threads_override;
            return run_train(cfg, out, err);
        });
    }
    if (eval->parsed()) return run_eval(ckpt_path, data_path, report_path, out, err);
    if (encode->parsed()) return run_encode(ckpt_path, in_path, out_path, out, err);
    if (analyze->parsed()) return run_analyze(ckpt_path, in_path, mode, out_dir, out, err);
    if (params->parsed()) return run_params(config_path, out, err);
    err << "usage error: no subcommand\n";
    return kExitConfig;
}

}  // namespace dsa::cli
