#pragma once

// Embedding providers: text -> unit vector.
//
// HashingEmbedder is the deterministic built-in used by the test suite.
// LineProtocolEmbedder talks to an external encoder over a JSON-lines channel
// (a subprocess's stdin/stdout or a TCP socket):
//
//     request:  {"id": 7, "text": "..."}
//     response: {"id": 7, "vec": [0.1, -0.3, ...]}

#include <netdb.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <deque>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "feedshift/common.hpp"
#include "feedshift/lexicon.hpp"

namespace feedshift::textmetrics {

struct EmbeddingVector {
    std::vector<double> components;

    std::size_t dimension() const { return components.size(); }
    double norm() const {
        CompensatedSum s;
        for (double c : components) s.add(c * c);
        return std::sqrt(s.value());
    }
    bool is_zero() const {
        return std::all_of(components.begin(), components.end(), [](double c) { return c == 0.0; });
    }
};

/// Scales v to unit norm in place; leaves the zero vector untouched.
inline void normalize(EmbeddingVector& v) {
    const double n = v.norm();
    if (n == 0.0) return;
    for (double& c : v.components) c /= n;
}

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual std::size_t dimension() const = 0;
    virtual EmbeddingVector embed(std::string_view text) = 0;

    /// Embeds many texts; results are in input order.
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed(t));
        return out;
    }

    /// Stable description used in manifests, e.g. "hashing:64:seed=0".
    virtual std::string describe() const = 0;

    /// Whether embed() may be called concurrently from several threads.
    virtual bool thread_safe() const { return false; }
};

/// Feature-hashing embedder. Each token lands in one of `dim` buckets chosen by
/// a seeded hash; in signed mode a second hash bit picks the sign. The bucket
/// counts are then unit-normalized. Same text, same bits.
class HashingEmbedder final : public EmbeddingProvider {
public:
    explicit HashingEmbedder(std::size_t dim = 64, std::uint64_t seed = 0, bool signed_buckets = false)
        : dim_(dim), seed_(seed), signed_(signed_buckets) {
        if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
    }

    std::size_t dimension() const override { return dim_; }

    std::size_t bucket(std::string_view token) const { return static_cast<std::size_t>(hash(token) % dim_); }
    double sign(std::string_view token) const {
        return signed_ ? ((hash(token) >> 63) ? -1.0 : 1.0) : 1.0;
    }

    EmbeddingVector embed(std::string_view text) override {
        std::vector<std::string> tokens;
        lexicon::tokenize_into(text, tokens);
        return embed_tokens(tokens);
    }

    EmbeddingVector embed_tokens(std::span<const std::string> tokens) const {
        EmbeddingVector v;
        v.components.assign(dim_, 0.0);
        for (const auto& t : tokens) {
            const auto h = hash(t);
            const double s = signed_ ? ((h >> 63) ? -1.0 : 1.0) : 1.0;
            v.components[h % dim_] += s;
        }
        normalize(v);
        return v;
    }

    std::string describe() const override {
        return std::string(signed_ ? "hashing-signed:" : "hashing:") + std::to_string(dim_) +
               ":seed=" + std::to_string(seed_);
    }

    bool thread_safe() const override { return true; }

private:
    std::uint64_t hash(std::string_view token) const { return mix64(fnv1a64(token) ^ seed_); }

    std::size_t dim_;
    std::uint64_t seed_;
    bool signed_;
};

/// Bidirectional line channel to an external encoder.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void write_line(std::string_view line) = 0;
    /// Returns false at end of stream.
    virtual bool read_line(std::string& line) = 0;
};

namespace detail {

class FdReader {
public:
    explicit FdReader(int fd) : fd_(fd) {}

    bool read_line(std::string& line) {
        line.clear();
        while (true) {
            const auto nl = buffer_.find('\n', pos_);
            if (nl != std::string::npos) {
                line.assign(buffer_, pos_, nl - pos_);
                pos_ = nl + 1;
                if (pos_ > 65536) {
                    buffer_.erase(0, pos_);
                    pos_ = 0;
                }
                return true;
            }
            char chunk[65536];
            const ssize_t got = ::read(fd_, chunk, sizeof chunk);
            if (got < 0 && errno == EINTR) continue;
            if (got <= 0) {
                if (pos_ < buffer_.size()) {
                    line.assign(buffer_, pos_, std::string::npos);
                    pos_ = buffer_.size();
                    return true;
                }
                return false;
            }
            buffer_.append(chunk, static_cast<std::size_t>(got));
        }
    }

private:
    int fd_;
    std::string buffer_;
    std::size_t pos_ = 0;
};

inline void write_all(int fd, std::string_view data) {
    while (!data.empty()) {
        const ssize_t put = ::write(fd, data.data(), data.size());
        if (put < 0 && errno == EINTR) continue;
        if (put <= 0) throw Error(std::string("embedding channel write failed: ") + std::strerror(errno));
        data.remove_prefix(static_cast<std::size_t>(put));
    }
}

}  // namespace detail

/// Runs `/bin/sh -c command` and speaks over its stdin/stdout.
class ProcessChannel final : public LineChannel {
public:
    explicit ProcessChannel(const std::string& command) {
        int to_child[2];
        int from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) throw Error("pipe() failed");
        ::signal(SIGPIPE, SIG_IGN);
        pid_ = ::fork();
        if (pid_ < 0) throw Error("fork() failed");
        if (pid_ == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
        reader_ = std::make_unique<detail::FdReader>(read_fd_);
    }

    ProcessChannel(const ProcessChannel&) = delete;
    ProcessChannel& operator=(const ProcessChannel&) = delete;

    ~ProcessChannel() override {
        if (write_fd_ >= 0) ::close(write_fd_);
        if (read_fd_ >= 0) ::close(read_fd_);
        if (pid_ > 0) {
            int status = 0;
            ::waitpid(pid_, &status, 0);
        }
    }

    void write_line(std::string_view line) override {
        std::string buf(line);
        buf.push_back('\n');
        detail::write_all(write_fd_, buf);
    }

    bool read_line(std::string& line) override { return reader_->read_line(line); }

private:
    pid_t pid_ = -1;
    int write_fd_ = -1;
    int read_fd_ = -1;
    std::unique_ptr<detail::FdReader> reader_;
};

/// Connects to host:port and exchanges newline-delimited JSON.
class TcpChannel final : public LineChannel {
public:
    TcpChannel(const std::string& host, const std::string& port) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
            throw ValidationError("cannot resolve embedding endpoint " + host + ":" + port + ": " +
                                  ::gai_strerror(rc));
        for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
            fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
            if (fd_ < 0) continue;
            if (::connect(fd_, ai->ai_addr, ai->ai_addrlen) == 0) break;
            ::close(fd_);
            fd_ = -1;
        }
        ::freeaddrinfo(res);
        if (fd_ < 0) throw ValidationError("cannot connect to embedding endpoint " + host + ":" + port);
        ::signal(SIGPIPE, SIG_IGN);
        reader_ = std::make_unique<detail::FdReader>(fd_);
    }

    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    ~TcpChannel() override {
        if (fd_ >= 0) ::close(fd_);
    }

    void write_line(std::string_view line) override {
        std::string buf(line);
        buf.push_back('\n');
        detail::write_all(fd_, buf);
    }

    bool read_line(std::string& line) override { return reader_->read_line(line); }

private:
    int fd_ = -1;
    std::unique_ptr<detail::FdReader> reader_;
};

/// Client for the JSON-lines embedding protocol. Up to `max_in_flight` requests
/// are pipelined; responses may arrive in any order and are matched by id.
class LineProtocolEmbedder final : public EmbeddingProvider {
public:
    LineProtocolEmbedder(std::unique_ptr<LineChannel> channel, std::string description,
                         std::size_t max_in_flight = 64)
        : channel_(std::move(channel)), description_(std::move(description)),
          max_in_flight_(std::max<std::size_t>(1, max_in_flight)) {}

    std::size_t dimension() const override { return dim_; }

    EmbeddingVector embed(std::string_view text) override {
        const std::string tmp(text);
        return embed_batch(std::span<const std::string>(&tmp, 1)).front();
    }

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
        std::vector<EmbeddingVector> out(texts.size());
        std::vector<bool> done(texts.size(), false);
        const std::uint64_t base = next_id_;
        next_id_ += texts.size();
        std::size_t sent = 0;
        std::size_t received = 0;
        std::string line;
        while (received < texts.size()) {
            while (sent < texts.size() && sent - received < max_in_flight_) {
                nlohmann::json req = {{"id", base + sent}, {"text", texts[sent]}};
                channel_->write_line(req.dump());
                ++sent;
            }
            if (!channel_->read_line(line)) throw Error("embedding provider closed the channel");
            nlohmann::json resp;
            try {
                resp = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw Error(std::string("malformed embedding response: ") + e.what());
            }
            if (!resp.contains("id") || !resp.contains("vec") || !resp["vec"].is_array())
                throw Error("embedding response lacks id or vec");
            const auto id = resp["id"].get<std::uint64_t>();
            if (id < base || id >= base + texts.size() || done[id - base])
                throw Error("unexpected embedding response id " + std::to_string(id));
            EmbeddingVector v;
            v.components = resp["vec"].get<std::vector<double>>();
            if (dim_ == 0)
                dim_ = v.components.size();
            else if (v.components.size() != dim_)
                throw Error("embedding dimension changed from " + std::to_string(dim_) + " to " +
                            std::to_string(v.components.size()));
            for (double c : v.components)
                if (!std::isfinite(c)) throw Error("non-finite embedding component");
            normalize(v);
            out[id - base] = std::move(v);
            done[id - base] = true;
            ++received;
        }
        return out;
    }

    std::string describe() const override { return description_; }

private:
    std::unique_ptr<LineChannel> channel_;
    std::string description_;
    std::size_t max_in_flight_;
    std::size_t dim_ = 0;
    std::uint64_t next_id_ = 0;
};

/// Builds a provider from a spec string:
///   "builtin-test" | "hashing:<dim>[:<seed>]" | "hashing-signed:<dim>[:<seed>]"
///   "process:<shell command>" | "tcp:<host>:<port>"
inline std::unique_ptr<EmbeddingProvider> make_embedder(const std::string& spec) {
    if (spec.empty() || spec == "builtin-test") return std::make_unique<HashingEmbedder>(64, 0, false);
    auto parse_hashing = [&](std::string_view rest, bool signed_buckets) {
        const auto parts = split_view(rest, ':');
        const std::size_t dim = std::stoul(std::string(parts.at(0)));
        const std::uint64_t seed = parts.size() > 1 ? std::stoull(std::string(parts[1])) : 0;
        return std::make_unique<HashingEmbedder>(dim, seed, signed_buckets);
    };
    if (spec.rfind("hashing-signed:", 0) == 0) return parse_hashing(spec.substr(15), true);
    if (spec.rfind("hashing:", 0) == 0) return parse_hashing(spec.substr(8), false);
    if (spec.rfind("process:", 0) == 0)
        return std::make_unique<LineProtocolEmbedder>(std::make_unique<ProcessChannel>(spec.substr(8)), spec);
    if (spec.rfind("tcp:", 0) == 0) {
        const std::string rest = spec.substr(4);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos) throw ValidationError("tcp embedder spec needs host:port");
        return std::make_unique<LineProtocolEmbedder>(
            std::make_unique<TcpChannel>(rest.substr(0, colon), rest.substr(colon + 1)), spec);
    }
    throw ValidationError("unknown embedder spec: " + spec);
}

}  // namespace feedshift::textmetrics
