#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dsa/data.hpp"
#include "dsa/error.hpp"

namespace dsa {

namespace {

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

[[noreturn]] void parse_fail(const std::string& path, long line_no, const std::string& what) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": " + what);
}

int pair_label_index(const std::string& label) {
    if (label == "entailment") return 0;
    if (label == "contradiction") return 1;
    if (label == "neutral") return 2;
    return -1;
}

bool is_integer(const std::string& s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) {
                tokens.push_back(current);
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) tokens.push_back(current);
    return tokens;
}

ParsedPairs parse_pair_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    ParsedPairs out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 3) parse_fail(path, line_no, "expected 3 tab-separated fields");
        if (fields[0] == "-") {
            ++out.skipped;
            continue;
        }
        const int label = pair_label_index(fields[0]);
        if (label < 0) parse_fail(path, line_no, "unknown label '" + fields[0] + "'");
        PairExample ex;
        ex.label = label;
        ex.premise = tokenize(fields[1]);
        ex.hypothesis = tokenize(fields[2]);
        if (ex.premise.empty()) parse_fail(path, line_no, "empty premise");
        if (ex.hypothesis.empty()) parse_fail(path, line_no, "empty hypothesis");
        out.examples.push_back(std::move(ex));
    }
    return out;
}

std::vector<SentenceExample> parse_sentence_dataset(const std::string& path, int classes) {
    if (classes < 2) throw ConfigError("parse_sentence_dataset: at least two classes required");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    std::vector<SentenceExample> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 2) parse_fail(path, line_no, "expected 2 tab-separated fields");
        if (!is_integer(fields[0])) parse_fail(path, line_no, "label is not an integer");
        int label = 0;
        std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
        if (label < 0 || label >= classes)
            parse_fail(path, line_no, "label " + fields[0] + " outside [0," + std::to_string(classes) + ")");
        SentenceExample ex;
        ex.label = label;
        ex.tokens = tokenize(fields[1]);
        if (ex.tokens.empty()) parse_fail(path, line_no, "empty sentence");
        out.push_back(std::move(ex));
    }
    return out;
}

DatasetKind sniff_dataset_kind(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    std::string line;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() == 3 && (pair_label_index(fields[0]) >= 0 || fields[0] == "-"))
            return DatasetKind::kPair;
        if (fields.size() == 2 && is_integer(fields[0])) return DatasetKind::kSingle;
        return DatasetKind::kUnknown;
    }
    return DatasetKind::kUnknown;
}

namespace detail {

RawVectorFile read_vector_file(const std::string& path, const std::set<std::string>& wanted) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vectors file: " + path);
    RawVectorFile out;
    std::set<std::string> seen;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string token;
        if (!(fields >> token)) parse_fail(path, line_no, "missing token");
        std::vector<double> values;
        double v = 0.0;
        while (fields >> v) values.push_back(v);
        if (!fields.eof()) parse_fail(path, line_no, "malformed numeric value");
        if (values.empty()) parse_fail(path, line_no, "no vector values for token '" + token + "'");
        if (out.dim == 0) out.dim = static_cast<Index>(values.size());
        if (static_cast<Index>(values.size()) != out.dim)
            throw FormatError(path + ":" + std::to_string(line_no) + ": vector has " +
                              std::to_string(values.size()) + " values, expected " + std::to_string(out.dim));
        if (!wanted.count(token) || seen.count(token)) continue;
        seen.insert(token);
        out.rows.emplace_back(token, std::move(values));
    }
    if (out.dim == 0) throw FormatError(path + ": vectors file contains no rows");
    return out;
}

}  // namespace detail

std::vector<std::string> toy_vocabulary(int vocab_size) {
    std::vector<std::string> vocab;
    vocab.reserve(static_cast<std::size_t>(vocab_size));
    for (int i = 0; i < vocab_size; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "tok%02d", i);
        vocab.emplace_back(buf);
    }
    return vocab;
}

std::vector<PairExample> generate_toy_pairs(const ToyPairSpec& spec) {
    if (spec.vocab_size < 12) throw ConfigError("toy pairs: vocabulary must hold keywords plus filler");
    const auto vocab = toy_vocabulary(spec.vocab_size);
    // Keyword tokens decide the label; the rest is filler.
    const std::vector<std::vector<std::string>> keywords = {
        {vocab[0], vocab[1]}, {vocab[2], vocab[3]}, {vocab[4], vocab[5]}};
    Rng rng(spec.seed);
    std::uniform_int_distribution<int> filler(6, spec.vocab_size - 1);
    std::uniform_int_distribution<int> length(2, 5);
    std::uniform_int_distribution<int> pick(0, 1);
    std::uniform_int_distribution<int> label_dist(0, 2);

    std::vector<PairExample> out;
    for (int e = 0; e < spec.examples; ++e) {
        PairExample ex;
        ex.label = label_dist(rng);
        const int premise_len = length(rng);
        for (int i = 0; i < premise_len; ++i) ex.premise.push_back(vocab[static_cast<std::size_t>(filler(rng))]);
        const int hyp_len = length(rng);
        for (int i = 0; i < hyp_len; ++i) ex.hypothesis.push_back(vocab[static_cast<std::size_t>(filler(rng))]);
        const auto& key = keywords[static_cast<std::size_t>(ex.label)][static_cast<std::size_t>(pick(rng))];
        std::uniform_int_distribution<std::size_t> slot(0, ex.hypothesis.size());
        ex.hypothesis.insert(ex.hypothesis.begin() + static_cast<std::ptrdiff_t>(slot(rng)), key);
        out.push_back(std::move(ex));
    }
    return out;
}

void write_pair_tsv(const std::string& path, const std::vector<PairExample>& examples) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset file: " + path);
    const char* names[] = {"entailment", "contradiction", "neutral"};
    for (const auto& ex : examples) {
        out << names[ex.label] << '\t';
        for (std::size_t i = 0; i < ex.premise.size(); ++i) out << (i ? " " : "") << ex.premise[i];
        out << '\t';
        for (std::size_t i = 0; i < ex.hypothesis.size(); ++i) out << (i ? " " : "") << ex.hypothesis[i];
        out << '\n';
    }
}

void write_toy_vectors(const std::string& path, int vocab_size, int dim, unsigned long long seed) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vectors file: " + path);
    Rng rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    char buf[32];
    for (const auto& token : toy_vocabulary(vocab_size)) {
        out << token;
        for (int i = 0; i < dim; ++i) {
            std::snprintf(buf, sizeof(buf), " %.9f", dist(rng));
            out << buf;
        }
        out << '\n';
    }
}

}  // namespace dsa
