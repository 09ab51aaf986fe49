#include "drugrec/distill.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "drugrec/embed.hpp"
#include "drugrec/error.hpp"
#include "drugrec/rng.hpp"
#include "drugrec/search.hpp"
#include "drugrec/util.hpp"

namespace drugrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool starts_with_keyword(std::string_view line, std::string_view keyword, std::string_view& rest) {
    line = trim(line);
    if (line.size() < keyword.size() || to_lower_ascii(line.substr(0, keyword.size())) != keyword) {
        return false;
    }
    auto after = trim(line.substr(keyword.size()));
    if (after.empty() || after.front() != ':') {
        return false;
    }
    rest = trim(after.substr(1));
    return true;
}

std::vector<std::string> sentences_of(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        const bool end = i == text.size() ||
                         ((text[i] == ' ' || text[i] == '\n' || text[i] == '\t') && i > 0 &&
                          (text[i - 1] == '.' || text[i - 1] == '!' || text[i - 1] == '?'));
        if (end) {
            auto s = normalize_space(text.substr(start, i - start));
            if (!s.empty()) {
                out.push_back(std::move(s));
            }
            start = i;
        }
    }
    return out;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

TeacherLabel parse_teacher_reply(std::string_view raw) {
    const auto lines = split(raw, '\n');
    int selected = 0;
    std::string rationale;
    bool have_reason = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view rest;
        if (selected == 0 && starts_with_keyword(lines[i], "answer", rest)) {
            if (!rest.empty() && (rest[0] == '1' || rest[0] == '2') &&
                (rest.size() == 1 || !std::isdigit(static_cast<unsigned char>(rest[1])))) {
                selected = rest[0] - '0';
            }
        } else if (!have_reason && starts_with_keyword(lines[i], "reason", rest)) {
            have_reason = true;
            std::string text(rest);
            for (std::size_t k = i + 1; k < lines.size(); ++k) {
                text += "\n" + lines[k];
            }
            rationale = std::string(trim(text));
            break;
        }
    }
    if (selected == 0) {
        throw UnparseableReply("no \"ANSWER: 1|2\" line in teacher reply");
    }
    if (rationale.empty()) {
        throw UnparseableReply("no non-empty \"REASON:\" line in teacher reply");
    }
    return {selected, std::move(rationale), std::string(raw)};
}

ReferenceTeacher::ReferenceTeacher(std::span<const TrainingRecord> records) {
    for (const auto& r : records) {
        const auto& rel_bg = r.label == 1 ? r.background_1 : r.background_2;
        const auto& other = r.label == 1 ? r.candidate_2 : r.candidate_1;
        std::string reason;
        for (const auto& c : rel_bg) {
            const auto s = sentences_of(c.text);
            if (!s.empty()) {
                reason = s.front();
                break;
            }
        }
        if (reason.empty()) {
            reason = r.relevant() + " has more direct evidence for treating " + r.disease + " than " + other + ".";
        }
        replies_[sha256_hex(r.prompt)] = "ANSWER: " + std::to_string(r.label) + "\nREASON: " + reason;
    }
}

std::string ReferenceTeacher::complete(const std::string& prompt) const {
    const auto it = replies_.find(sha256_hex(prompt));
    if (it == replies_.end()) {
        throw TeacherUnavailable("reference teacher has no answer for this prompt");
    }
    return it->second;
}

RemoteTeacherConfig RemoteTeacherConfig::from_env(std::string model, int max_tokens) {
    const char* endpoint = std::getenv("TEACHER_ENDPOINT");
    if (endpoint == nullptr || *endpoint == '\0') {
        throw ConfigInvalid("<env>", "TEACHER_ENDPOINT", "must be set for the remote teacher");
    }
    const char* key = std::getenv("TEACHER_API_KEY");
    RemoteTeacherConfig cfg;
    cfg.endpoint = endpoint;
    cfg.api_key = key != nullptr ? key : "";
    cfg.model = std::move(model);
    cfg.max_tokens = max_tokens;
    return cfg;
}

std::string RemoteTeacher::complete(const std::string& prompt) const {
    const json request{{"model", config_.model}, {"prompt", prompt}, {"max_tokens", config_.max_tokens}};
    const auto reply = http_post_json(config_.endpoint, request.dump(), config_.api_key, config_.timeout);
    try {
        return json::parse(reply).at("text").get<std::string>();
    } catch (const json::exception& e) {
        throw TeacherUnavailable(std::string("malformed teacher reply: ") + e.what());
    }
}

namespace {

constexpr const char* kReplyFormat = "drugrec-replies";
constexpr int kReplyVersion = 1;

std::string reply_key(std::string_view teacher_id, std::string_view prompt) {
    std::string material(teacher_id);
    material += '\n';
    material += prompt;
    return sha256_hex(material);
}

} // namespace

ReplyCache::ReplyCache(fs::path path) : path_(std::move(path)) {
    if (!fs::exists(path_)) {
        return;
    }
    std::ifstream in(path_, std::ios::binary);
    std::string line;
    try {
        if (!std::getline(in, line)) {
            throw CacheCorrupt("reply cache " + path_.string() + " is empty");
        }
        const auto header = json::parse(line);
        if (header.at("format").get<std::string>() != kReplyFormat ||
            header.at("version").get<int>() != kReplyVersion) {
            throw CacheCorrupt("reply cache " + path_.string() + " has an unknown format");
        }
        while (std::getline(in, line)) {
            const auto j = json::parse(line);
            entries_[j.at("key").get<std::string>()] = j.at("reply").get<std::string>();
        }
        if (entries_.size() != header.at("entries").get<std::size_t>()) {
            throw CacheCorrupt("reply cache " + path_.string() + " is truncated");
        }
    } catch (const std::exception& e) {
        entries_.clear();
        warnings_.emplace_back(e.what());
        std::cerr << "warning: " << e.what() << "; asking the teacher again\n";
    }
}

const std::string* ReplyCache::find(std::string_view teacher_id, std::string_view prompt) const {
    const auto it = entries_.find(reply_key(teacher_id, prompt));
    return it == entries_.end() ? nullptr : &it->second;
}

void ReplyCache::put(std::string_view teacher_id, std::string_view prompt, std::string reply) {
    entries_[reply_key(teacher_id, prompt)] = std::move(reply);
}

void ReplyCache::save() const {
    if (path_.empty()) {
        throw Error("reply cache has no path");
    }
    std::string out =
        json{{"format", kReplyFormat}, {"version", kReplyVersion}, {"entries", entries_.size()}}.dump() + "\n";
    for (const auto& [k, v] : entries_) {
        out += json{{"key", k}, {"reply", v}}.dump() + "\n";
    }
    write_file(path_, out);
}

void to_json(json& j, const LabeledRecord& r) {
    j = json(r.record);
    j["teacher"] = {{"selected", r.teacher.selected}, {"rationale", r.teacher.rationale}, {"raw", r.teacher.raw}};
}

void from_json(const json& j, LabeledRecord& r) {
    r.record = j.get<TrainingRecord>();
    const auto& t = j.at("teacher");
    t.at("selected").get_to(r.teacher.selected);
    t.at("rationale").get_to(r.teacher.rationale);
    t.at("raw").get_to(r.teacher.raw);
}

LabelingResult label_with_teacher(const TeacherClient& client, std::span<const TrainingRecord> records,
                                  ReplyCache* cache, const RetryPolicy& retry) {
    LabelingResult out;
    const auto teacher_id = client.id();
    for (const auto& r : records) {
        std::string raw;
        const std::string* cached = cache != nullptr ? cache->find(teacher_id, r.prompt) : nullptr;
        if (cached != nullptr) {
            raw = *cached;
        } else {
            try {
                raw = with_retries(retry, [&] {
                    ++out.teacher_calls;
                    return client.complete(r.prompt);
                });
            } catch (const Error& e) {
                throw TeacherUnavailable("teacher " + teacher_id + " failed on record " + r.id + ": " + e.what());
            }
            if (cache != nullptr) {
                cache->put(teacher_id, r.prompt, raw);
            }
        }
        try {
            out.labeled.push_back({r, parse_teacher_reply(raw)});
        } catch (const UnparseableReply& e) {
            out.quarantined.push_back({r.id, raw, e.what()});
        }
    }
    return out;
}

double selection_loss_ce(std::span<const double> p, int teacher_selected) {
    if (p.size() != 2 || (teacher_selected != 1 && teacher_selected != 2)) {
        throw Error("selection loss needs two probabilities and a selection of 1 or 2");
    }
    return -std::log(std::max(p[static_cast<std::size_t>(teacher_selected - 1)], kProbabilityFloor));
}

int selection_loss_indicator(int student_selected, int reference_selected) {
    return student_selected != reference_selected ? 1 : 0;
}

double rationale_loss(std::span<const double> r, std::span<const double> r_teacher) {
    if (r.size() != r_teacher.size()) {
        throw DimensionMismatch(r.size(), r_teacher.size());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double d = r[i] - r_teacher[i];
        s += d * d;
    }
    return s;
}

double total_loss(double select_ce, double rationale_mse, double lambda) { return select_ce + lambda * rationale_mse; }

ReferenceStudent::ReferenceStudent(std::size_t feature_dim, std::shared_ptr<const TextEmbedder> embedder)
    : theta_(feature_dim, 0.0), embedder_(std::move(embedder)) {
    if (feature_dim == 0) {
        throw Error("student feature_dim must be positive");
    }
    if (!embedder_) {
        throw Error("student needs a text embedder");
    }
}

namespace {

using Sparse = std::vector<std::pair<std::size_t, double>>;

Sparse candidate_features(const TrainingRecord& r, int candidate, std::size_t dim) {
    const auto& name = candidate == 1 ? r.candidate_1 : r.candidate_2;
    const auto& bg = candidate == 1 ? r.background_1 : r.background_2;
    std::map<std::size_t, double> counts;
    for (const auto& t : tokenize(name)) {
        counts[fnv1a64(t) % dim] += 1.0;
    }
    for (const auto& c : bg) {
        for (const auto& t : tokenize(c.text)) {
            counts[fnv1a64(t) % dim] += 1.0;
        }
    }
    double norm = 0.0;
    for (const auto& [_, v] : counts) {
        norm += v * v;
    }
    norm = std::sqrt(norm);
    Sparse out;
    for (const auto& [k, v] : counts) {
        out.emplace_back(k, v / norm);
    }
    return out;
}

double sparse_dot(std::span<const double> theta, const Sparse& x) {
    double s = 0.0;
    for (const auto& [k, v] : x) {
        s += theta[k] * v;
    }
    return s;
}

} // namespace

Sparse ReferenceStudent::feature_difference(const TrainingRecord& r) const {
    const auto a = candidate_features(r, 1, theta_.size());
    const auto b = candidate_features(r, 2, theta_.size());
    Sparse out;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() || j < b.size()) {
        if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
            out.push_back(a[i++]);
        } else if (i == a.size() || b[j].first < a[i].first) {
            out.emplace_back(b[j].first, -b[j].second);
            ++j;
        } else {
            const double d = a[i].second - b[j].second;
            if (d != 0.0) {
                out.emplace_back(a[i].first, d);
            }
            ++i;
            ++j;
        }
    }
    return out;
}

std::string ReferenceStudent::candidate_rationale(const TrainingRecord& r, int candidate) const {
    const auto& name = candidate == 1 ? r.candidate_1 : r.candidate_2;
    const auto& bg = candidate == 1 ? r.background_1 : r.background_2;
    const auto query = embedder_->embed(pair_text(r.disease, name));
    std::string best;
    double best_cos = -2.0;
    for (const auto& c : bg) {
        for (auto& s : sentences_of(c.text)) {
            const double cos = safe_cosine(query, embedder_->embed(s));
            if (cos > best_cos) {
                best_cos = cos;
                best = std::move(s);
            }
        }
    }
    if (best.empty()) {
        best = name + " is the better supported treatment for " + r.disease + ".";
    }
    return best;
}

StudentOutput ReferenceStudent::predict(const TrainingRecord& record) const {
    const double delta = sparse_dot(theta_, feature_difference(record));
    StudentOutput out;
    out.probs = {sigmoid(delta), sigmoid(-delta)};
    out.rationale = candidate_rationale(record, out.selected());
    return out;
}

void ReferenceStudent::update(std::span<const double> gradient, double learning_rate) {
    if (gradient.size() != theta_.size()) {
        throw DimensionMismatch(gradient.size(), theta_.size());
    }
    for (std::size_t i = 0; i < theta_.size(); ++i) {
        theta_[i] -= learning_rate * gradient[i];
    }
}

namespace {

constexpr char kStudentMagic[8] = {'D', 'R', 'S', 'T', 'U', 'D', 'N', 'T'};
constexpr std::uint32_t kStudentVersion = 1;

template <class T>
void put_le(std::string& out, T v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::string_view in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) {
        throw Error("student file is truncated");
    }
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    pos += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

} // namespace

void ReferenceStudent::save(const fs::path& path) const {
    std::string out(kStudentMagic, sizeof(kStudentMagic));
    put_le<std::uint32_t>(out, kStudentVersion);
    const auto id = embedder_->id();
    put_le<std::uint64_t>(out, id.size());
    out += id;
    put_le<std::uint64_t>(out, theta_.size());
    for (const double x : theta_) {
        put_le<double>(out, x);
    }
    write_file(path, out);
}

void ReferenceStudent::load_parameters(const fs::path& path) {
    const auto in = read_file(path);
    if (in.size() < sizeof(kStudentMagic) || std::memcmp(in.data(), kStudentMagic, sizeof(kStudentMagic)) != 0) {
        throw Error(path.string() + " is not a student file");
    }
    std::size_t pos = sizeof(kStudentMagic);
    if (get_le<std::uint32_t>(in, pos) != kStudentVersion) {
        throw Error(path.string() + ": unsupported student version");
    }
    const auto id_len = get_le<std::uint64_t>(in, pos);
    if (pos + id_len > in.size()) {
        throw Error("student file is truncated");
    }
    const auto id = in.substr(pos, id_len);
    pos += id_len;
    if (id != embedder_->id()) {
        throw Error(path.string() + " was trained with embedder " + id + ", not " + embedder_->id());
    }
    const auto dim = get_le<std::uint64_t>(in, pos);
    if (dim != theta_.size()) {
        throw DimensionMismatch(dim, theta_.size());
    }
    for (auto& x : theta_) {
        x = get_le<double>(in, pos);
    }
    if (pos != in.size()) {
        throw Error(path.string() + " has trailing bytes");
    }
}

void DistillConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw Error("distill.learning_rate must be positive");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw Error("distill.lambda must be non-negative");
    }
    if (feature_dim == 0) {
        throw Error("distill.feature_dim must be positive");
    }
}

DistillExample make_example(const ReferenceStudent& student, const LabeledRecord& r) {
    const auto& e = student.embedder();
    return {student.feature_difference(r.record), e.embed(student.candidate_rationale(r.record, 1)),
            e.embed(student.candidate_rationale(r.record, 2)), e.embed(r.teacher.rationale), r.teacher.selected};
}

LossBreakdown distill_loss(std::span<const double> theta, std::span<const DistillExample> examples, double lambda,
                           std::vector<double>* grad) {
    if (grad != nullptr) {
        grad->assign(theta.size(), 0.0);
    }
    LossBreakdown mean;
    mean.lambda = lambda;
    if (examples.empty()) {
        return mean;
    }
    const double n = static_cast<double>(examples.size());
    Vector r;
    for (const auto& ex : examples) {
        const double delta = sparse_dot(theta, ex.dphi);
        const double p1 = sigmoid(delta);
        const double p2 = sigmoid(-delta);
        const std::array<double, 2> p{p1, p2};
        const double ce = selection_loss_ce(p, ex.teacher_selected);
        const int predicted = p2 > p1 ? 2 : 1;
        r.resize(ex.e1.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            r[i] = p1 * ex.e1[i] + p2 * ex.e2[i];
        }
        const double mse = rationale_loss(r, ex.e_teacher);
        mean.select_ce += ce / n;
        mean.select_indicator += selection_loss_indicator(predicted, ex.teacher_selected) / n;
        mean.rationale_mse += mse / n;
        mean.total += total_loss(ce, mse, lambda) / n;

        if (grad != nullptr) {
            // d/d(delta) of -ln p_y: p1 - 1 for y = 1, p1 for y = 2; zero
            // where the floor is active.
            double g = 0.0;
            if (ex.teacher_selected == 1 && p1 >= kProbabilityFloor) {
                g = -p2;
            } else if (ex.teacher_selected == 2 && p2 >= kProbabilityFloor) {
                g = p1;
            }
            double proj = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) {
                proj += (r[i] - ex.e_teacher[i]) * (ex.e1[i] - ex.e2[i]);
            }
            g += lambda * 2.0 * proj * p1 * p2;
            for (const auto& [k, v] : ex.dphi) {
                (*grad)[k] += g * v / n;
            }
        }
    }
    return mean;
}

TrainResult train_reference_student(ReferenceStudent& student, std::span<const LabeledRecord> records,
                                    const DistillConfig& cfg) {
    cfg.validate();
    if (records.size() < 2) {
        throw DegenerateDataset("need at least two labeled records, got " + std::to_string(records.size()));
    }
    const bool has_1 = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.teacher.selected == 1; });
    const bool has_2 = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.teacher.selected == 2; });
    if (!has_1 || !has_2) {
        throw DegenerateDataset("teacher selections contain a single class");
    }
    if (student.feature_dim() != cfg.feature_dim) {
        throw DimensionMismatch(student.feature_dim(), cfg.feature_dim);
    }

    std::vector<DistillExample> examples;
    examples.reserve(records.size());
    for (const auto& r : records) {
        examples.push_back(make_example(student, r));
    }

    auto theta = student.mutable_parameters();
    Rng rng(mix_seed(cfg.seed, 7));
    for (auto& x : theta) {
        x = rng.uniform(-0.01, 0.01);
    }

    TrainResult out;
    std::vector<double> grad;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        out.curve.push_back(distill_loss(theta, examples, cfg.lambda, &grad));
        student.update(grad, cfg.learning_rate);
    }
    out.curve.push_back(distill_loss(theta, examples, cfg.lambda));

    std::size_t correct = 0;
    for (const auto& ex : examples) {
        const double delta = sparse_dot(theta, ex.dphi);
        correct += ((sigmoid(-delta) > sigmoid(delta) ? 2 : 1) == ex.teacher_selected) ? 1 : 0;
    }
    out.train_accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    return out;
}

std::string losses_csv(std::span<const LossBreakdown> curve) {
    std::string out = "epoch,select_ce,select_indicator,rationale_mse,lambda,total\n";
    for (std::size_t e = 0; e < curve.size(); ++e) {
        const auto& l = curve[e];
        out += std::to_string(e) + "," + format_double(l.select_ce) + "," + format_double(l.select_indicator) + "," +
               format_double(l.rationale_mse) + "," + format_double(l.lambda) + "," + format_double(l.total) + "\n";
    }
    return out;
}

void to_json(json& j, const StudentPrediction& p) {
    j = json{{"id", p.id}, {"selected", p.selected}, {"probs", p.probs}, {"rationale", p.rationale}};
}

void from_json(const json& j, StudentPrediction& p) {
    j.at("id").get_to(p.id);
    j.at("selected").get_to(p.selected);
    j.at("probs").get_to(p.probs);
    j.at("rationale").get_to(p.rationale);
}

} // namespace drugrec
