#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "instopt/error.hpp"

namespace instopt {

using Embedding = std::vector<float>;

struct ChatMessage {
  std::string role;
  std::string content;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds base_delay{200};
  std::chrono::milliseconds max_delay{5000};

  // Exponential backoff: base * 2^(attempt-1), capped at max_delay.
  std::chrono::milliseconds delay_for(int attempt) const;
};

// Text embedding service. Implementations must return one unit-norm vector of
// a fixed dimension per input, in input order.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<Embedding> embed(const std::vector<std::string>& texts) = 0;
};

// Chat-completion service returning the assistant message text.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

// Failure that retrying cannot fix (bad request, authentication).
class PermanentUpstreamError : public UpstreamError {
 public:
  using UpstreamError::UpstreamError;
};

// Runs `call` up to policy.max_attempts times, sleeping with exponential
// backoff between attempts. PermanentUpstreamError is rethrown at once;
// other failures are rethrown as UpstreamError after the last attempt.
std::string call_with_retry(const RetryPolicy& policy,
                            const std::function<std::string()>& call,
                            const std::string& what);

double cosine(const Embedding& a, const Embedding& b);
void normalize_in_place(Embedding& v);

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP clients.

struct EndpointConfig {
  std::string url;           // e.g. http://localhost:8000/v1/chat/completions
  std::string model;
  std::string api_key_env;   // name of the environment variable holding the key
  std::chrono::seconds timeout{60};
  RetryPolicy retry;
  std::size_t max_batch = 64;  // embeddings per request
};

class OpenAiChatClient final : public ChatProvider {
 public:
  explicit OpenAiChatClient(EndpointConfig config);
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  EndpointConfig config_;
};

class OpenAiEmbeddingClient final : public EmbeddingProvider {
 public:
  explicit OpenAiEmbeddingClient(EndpointConfig config);
  std::vector<Embedding> embed(const std::vector<std::string>& texts) override;

 private:
  EndpointConfig config_;
};

// Builds the request body sent to a chat endpoint (temperature 0).
std::string chat_request_body(const std::string& model,
                              const std::vector<ChatMessage>& messages);
// Extracts choices[0].message.content; throws UpstreamError on bad payloads.
std::string parse_chat_response(const std::string& body);
std::string embedding_request_body(const std::string& model,
                                   const std::vector<std::string>& texts);
// Returns embeddings ordered by their `index` field, unit-normalised.
std::vector<Embedding> parse_embedding_response(const std::string& body,
                                                std::size_t expected);

// ---------------------------------------------------------------------------
// Offline deterministic providers.

// Signed feature hashing of lowercase word unigrams into `dim` buckets,
// normalised to unit length. Texts sharing no tokens are orthogonal in
// expectation; identical texts embed identically.
class HashingEmbedder final : public EmbeddingProvider {
 public:
  explicit HashingEmbedder(std::size_t dim = 256, std::uint64_t seed = 0);
  std::vector<Embedding> embed(const std::vector<std::string>& texts) override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Lookup table of fixed vectors; unknown texts raise UpstreamError.
class TableEmbedder final : public EmbeddingProvider {
 public:
  explicit TableEmbedder(std::map<std::string, Embedding> table);
  std::vector<Embedding> embed(const std::vector<std::string>& texts) override;

 private:
  std::map<std::string, Embedding> table_;
};

// Always replies with the same text.
class FixedChatProvider final : public ChatProvider {
 public:
  explicit FixedChatProvider(std::string reply) : reply_(std::move(reply)) {}
  std::string complete(const std::vector<ChatMessage>&) override { return reply_; }

 private:
  std::string reply_;
};

// Replies with a bracketed list of the tags whose keyword occurs (case
// insensitive, whole word) in the last user message. Rules are checked in
// order; a reply with no matches is "[]".
class KeywordChatProvider final : public ChatProvider {
 public:
  struct Rule {
    std::string keyword;
    std::string tag;
  };

  explicit KeywordChatProvider(std::vector<Rule> rules);
  std::string complete(const std::vector<ChatMessage>& messages) override;

  // Loads `keyword<TAB>tag` lines; blank lines and `#` comments are ignored.
  static KeywordChatProvider from_file(const std::string& path);

 private:
  std::vector<Rule> rules_;
};

}  // namespace instopt
