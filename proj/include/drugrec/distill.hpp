#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drugrec/dataset.hpp"
#include "drugrec/http.hpp"
#include "drugrec/rerank.hpp"

namespace drugrec {

struct TeacherLabel {
    int selected = 1; // 1 or 2
    std::string rationale;
    std::string raw;

    friend bool operator==(const TeacherLabel&, const TeacherLabel&) = default;
};

/// Reads "ANSWER: <1|2>" and "REASON: <text>" lines. Keywords are
/// case-insensitive; the reason runs to the end of the reply. Throws
/// UnparseableReply.
TeacherLabel parse_teacher_reply(std::string_view raw);

class TeacherClient {
public:
    virtual ~TeacherClient() = default;
    virtual std::string id() const = 0;
    /// Raw completion text. Throws drugrec::Error on failure.
    virtual std::string complete(const std::string& prompt) const = 0;
};

/// Same reply for every prompt.
class FixedTeacher final : public TeacherClient {
public:
    explicit FixedTeacher(std::string reply, std::string id = "fixed") : reply_(std::move(reply)), id_(std::move(id)) {}
    std::string id() const override { return id_; }
    std::string complete(const std::string&) const override {
        ++calls;
        return reply_;
    }
    mutable std::size_t calls = 0;

private:
    std::string reply_;
    std::string id_;
};

/// Offline teacher for pipeline runs: knows the records it will be asked
/// about and answers with the sampler's relevant candidate plus an
/// extractive reason taken from that candidate's background.
class ReferenceTeacher final : public TeacherClient {
public:
    explicit ReferenceTeacher(std::span<const TrainingRecord> records);
    std::string id() const override { return "reference-v1"; }
    std::string complete(const std::string& prompt) const override;

private:
    std::map<std::string, std::string> replies_; // prompt sha256 -> reply
};

struct RemoteTeacherConfig {
    std::string endpoint;
    std::string api_key;
    std::string model = "teacher";
    int max_tokens = 256;
    std::chrono::milliseconds timeout{120000};

    /// TEACHER_ENDPOINT / TEACHER_API_KEY. Throws ConfigInvalid when unset.
    static RemoteTeacherConfig from_env(std::string model, int max_tokens);
};

/// POST {"model", "prompt", "max_tokens"} -> {"text"}.
class RemoteTeacher final : public TeacherClient {
public:
    explicit RemoteTeacher(RemoteTeacherConfig config) : config_(std::move(config)) {}
    std::string id() const override { return "remote:" + config_.model; }
    std::string complete(const std::string& prompt) const override;

private:
    RemoteTeacherConfig config_;
};

/// Raw teacher replies keyed by SHA-256 of (teacher id, prompt). Stored as
/// versioned JSON Lines; a corrupt file is ignored with a warning.
class ReplyCache {
public:
    ReplyCache() = default;
    explicit ReplyCache(std::filesystem::path path);

    const std::string* find(std::string_view teacher_id, std::string_view prompt) const;
    void put(std::string_view teacher_id, std::string_view prompt, std::string reply);
    std::size_t size() const { return entries_.size(); }
    void save() const;

    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    std::filesystem::path path_;
    std::map<std::string, std::string> entries_;
    std::vector<std::string> warnings_;
};

struct LabeledRecord {
    TrainingRecord record;
    TeacherLabel teacher;

    friend bool operator==(const LabeledRecord&, const LabeledRecord&) = default;
};

void to_json(nlohmann::json& j, const LabeledRecord& r);
void from_json(const nlohmann::json& j, LabeledRecord& r);

struct Quarantined {
    std::string id;
    std::string raw;
    std::string reason;
};

struct LabelingResult {
    std::vector<LabeledRecord> labeled;
    std::vector<Quarantined> quarantined;
    std::size_t teacher_calls = 0;
};

/// Labels every record, in order. Replies are cached (when `cache` is set)
/// before parsing, so a warm cache needs no teacher calls. Unparseable
/// replies are quarantined. Throws TeacherUnavailable once the retry budget
/// for a record is spent.
LabelingResult label_with_teacher(const TeacherClient& client, std::span<const TrainingRecord> records,
                                  ReplyCache* cache, const RetryPolicy& retry = {});

// Losses.

inline constexpr double kProbabilityFloor = 1e-12;

/// -ln(max(p[teacher - 1], 1e-12)).
double selection_loss_ce(std::span<const double> p, int teacher_selected);
/// 1 when the selections differ.
int selection_loss_indicator(int student_selected, int reference_selected);
/// Squared Euclidean distance. Throws DimensionMismatch.
double rationale_loss(std::span<const double> r, std::span<const double> r_teacher);
double total_loss(double select_ce, double rationale_mse, double lambda);

struct LossBreakdown {
    double select_ce = 0.0;
    double select_indicator = 0.0; // 0/1 per record; a rate when averaged
    double rationale_mse = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

// Students.

struct StudentOutput {
    std::array<double, 2> probs{0.5, 0.5};
    std::string rationale;

    int selected() const { return probs[1] > probs[0] ? 2 : 1; }
};

class Student {
public:
    virtual ~Student() = default;
    virtual StudentOutput predict(const TrainingRecord& record) const = 0;
    virtual std::span<const double> parameters() const = 0;
    virtual void update(std::span<const double> gradient, double learning_rate) = 0;
};

/// Logistic scorer: s_i = theta . phi_i with phi_i the L2-normalized hashed
/// bag of words of candidate i's name and background, p_1 = sigmoid(s_1 -
/// s_2). The rationale is the background sentence closest to the pair text
/// of the chosen candidate.
class ReferenceStudent final : public Student {
public:
    ReferenceStudent(std::size_t feature_dim, std::shared_ptr<const TextEmbedder> embedder);

    std::size_t feature_dim() const { return theta_.size(); }
    const TextEmbedder& embedder() const { return *embedder_; }

    /// phi_1 - phi_2, sparse as (bucket, value) sorted by bucket.
    std::vector<std::pair<std::size_t, double>> feature_difference(const TrainingRecord& r) const;
    /// Extractive rationale for candidate 1 or 2.
    std::string candidate_rationale(const TrainingRecord& r, int candidate) const;

    StudentOutput predict(const TrainingRecord& record) const override;
    std::span<const double> parameters() const override { return theta_; }
    std::span<double> mutable_parameters() { return theta_; }
    void update(std::span<const double> gradient, double learning_rate) override;

    /// Binary file: magic, version, embedder id, dim, then little-endian
    /// doubles.
    void save(const std::filesystem::path& path) const;
    void load_parameters(const std::filesystem::path& path);

private:
    std::vector<double> theta_;
    std::shared_ptr<const TextEmbedder> embedder_;
};

struct DistillConfig {
    std::size_t epochs = 200;
    double learning_rate = 2.0;
    double lambda = 1.0;
    std::uint64_t seed = 42;
    std::size_t feature_dim = 4096;

    void validate() const;
};

/// Everything the loss needs for one record, precomputed once.
struct DistillExample {
    std::vector<std::pair<std::size_t, double>> dphi; // phi_1 - phi_2
    Vector e1;                                        // embedding of candidate 1's rationale
    Vector e2;
    Vector e_teacher;
    int teacher_selected = 1;
};

DistillExample make_example(const ReferenceStudent& student, const LabeledRecord& r);

/// Mean loss over examples with the training objective; fills the mean
/// gradient with respect to theta when `grad` is set. The rationale term
/// uses the mixture p_1 e1 + p_2 e2 so it is differentiable in theta.
LossBreakdown distill_loss(std::span<const double> theta, std::span<const DistillExample> examples, double lambda,
                           std::vector<double>* grad = nullptr);

struct TrainResult {
    std::vector<LossBreakdown> curve; // curve[e]: mean loss after e updates
    double train_accuracy = 0.0;      // against teacher selections
};

/// Full-batch gradient descent from a seeded small random start. Throws
/// DegenerateDataset with fewer than two records or a single teacher class.
TrainResult train_reference_student(ReferenceStudent& student, std::span<const LabeledRecord> records,
                                    const DistillConfig& cfg);

/// "epoch,select_ce,select_indicator,rationale_mse,lambda,total" rows.
std::string losses_csv(std::span<const LossBreakdown> curve);

struct StudentPrediction {
    std::string id;
    int selected = 1;
    std::array<double, 2> probs{0.5, 0.5};
    std::string rationale;

    friend bool operator==(const StudentPrediction&, const StudentPrediction&) = default;
};

void to_json(nlohmann::json& j, const StudentPrediction& p);
void from_json(const nlohmann::json& j, StudentPrediction& p);

} // namespace drugrec
