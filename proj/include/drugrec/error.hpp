#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace drugrec {

/// Base of every error raised by the pipeline. Stage wrappers in the CLI map
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// kg_store
class MissingFile : public Error {
public:
    explicit MissingFile(const std::string& path) : Error("missing file: " + path), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

class MalformedLine : public Error {
public:
    MalformedLine(std::size_t line_no, const std::string& why)
        : Error("malformed line " + std::to_string(line_no) + ": " + why), line_no_(line_no) {}
    std::size_t line_no() const { return line_no_; }

private:
    std::size_t line_no_;
};

class UnknownEntity : public Error {
public:
    using Error::Error;
};

class UnknownRelation : public Error {
public:
    using Error::Error;
};

// kg_embed
class ZeroVector : public Error {
public:
    ZeroVector() : Error("cosine of a zero vector is undefined") {}
};

class DimensionMismatch : public Error {
public:
    DimensionMismatch(std::size_t a, std::size_t b)
        : Error("dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class EmptyGraph : public Error {
public:
    EmptyGraph() : Error("graph has no edges") {}
};

// pair_sampler
class NotADisease : public Error {
public:
    using Error::Error;
};

class InsufficientCandidates : public Error {
public:
    explicit InsufficientCandidates(std::size_t pool_size)
        : InsufficientCandidates(pool_size, "insufficient candidates: pool has " +
                                                std::to_string(pool_size) + " member(s)") {}
    std::size_t pool_size() const { return pool_size_; }

protected:
    InsufficientCandidates(std::size_t pool_size, const std::string& what)
        : Error(what), pool_size_(pool_size) {}

private:
    std::size_t pool_size_;
};

class EmptyPool : public InsufficientCandidates {
public:
    EmptyPool() : InsufficientCandidates(0, "candidate pool is empty") {}
};

// corpus_ingest
class XmlMalformed : public Error {
public:
    using Error::Error;
};

class JsonMalformed : public Error {
public:
    using Error::Error;
};

class EmptyDrugList : public Error {
public:
    EmptyDrugList() : Error("drug name list is empty") {}
};

// search_index
class DuplicateChunkRef : public Error {
public:
    using Error::Error;
};

class UnknownChunk : public Error {
public:
    using Error::Error;
};

class SnapshotError : public Error {
public:
    using Error::Error;
};

// reranker
class EmptyName : public Error {
public:
    EmptyName() : Error("disease and drug names must be non-empty") {}
};

class EmbedderFailure : public Error {
public:
    using Error::Error;
};

class CacheCorrupt : public Error {
public:
    using Error::Error;
};

// dataset_builder
class UnboundPlaceholder : public Error {
public:
    using Error::Error;
};

class MalformedTemplate : public Error {
public:
    using Error::Error;
};

class MissingBackgroundKey : public Error {
public:
    using Error::Error;
};

class UnreadableFile : public Error {
public:
    using Error::Error;
};

// distill_harness
class UnparseableReply : public Error {
public:
    using Error::Error;
};

class TeacherUnavailable : public Error {
public:
    using Error::Error;
};

class DegenerateDataset : public Error {
public:
    using Error::Error;
};

// eval_metrics
class LengthMismatch : public Error {
public:
    using Error::Error;
};

class EmptyInput : public Error {
public:
    using Error::Error;
};

class IdMismatch : public Error {
public:
    using Error::Error;
};

// cli_orchestrator
class ConfigInvalid : public Error {
public:
    ConfigInvalid(const std::string& path, const std::string& key, const std::string& why)
        : Error("invalid config " + path + ": " + key + ": " + why), key_(key) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

class MissingInput : public Error {
public:
    MissingInput(const std::string& stage, const std::string& path)
        : Error("stage " + stage + ": missing input " + path) {}
};

class MissingArtifact : public Error {
public:
    explicit MissingArtifact(const std::string& path) : Error("missing artifact: " + path) {}
};

class StageFailed : public Error {
public:
    StageFailed(const std::string& stage, const std::string& why)
        : Error("stage " + stage + " failed: " + why), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

} // namespace drugrec
