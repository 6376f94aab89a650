#include "instopt/providers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "csv.hpp"
#include "instopt/corpus.hpp"

namespace instopt {

using nlohmann::json;

std::chrono::milliseconds RetryPolicy::delay_for(int attempt) const {
  if (attempt <= 1) return base_delay;
  auto delay = base_delay;
  for (int i = 1; i < attempt && delay < max_delay; ++i) delay *= 2;
  return std::min(delay, max_delay);
}

std::string call_with_retry(const RetryPolicy& policy,
                            const std::function<std::string()>& call,
                            const std::string& what) {
  const int attempts = std::max(1, policy.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      return call();
    } catch (const PermanentUpstreamError&) {
      throw;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
    if (attempt < attempts) std::this_thread::sleep_for(policy.delay_for(attempt));
  }
  throw UpstreamError("providers", what + " failed after " + std::to_string(attempts) +
                                       " attempts: " + last_error);
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) {
    throw ValidationError("providers", "embedding dimensions differ: " +
                                           std::to_string(a.size()) + " vs " +
                                           std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

void normalize_in_place(Embedding& v) {
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  if (norm == 0.0) return;
  const double inv = 1.0 / std::sqrt(norm);
  for (float& x : v) x = static_cast<float>(x * inv);
}

// ---------------------------------------------------------------------------

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("providers", "endpoint URL lacks a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string post_json(const EndpointConfig& config, const std::string& body) {
  const SplitUrl target = split_url(config.url);
  httplib::Client client(target.origin);
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  client.set_write_timeout(config.timeout);

  httplib::Headers headers;
  if (!config.api_key_env.empty()) {
    if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  auto response = client.Post(target.path, headers, body, "application/json");
  if (!response) {
    throw UpstreamError("providers", "request to " + config.url + " failed: " +
                                         httplib::to_string(response.error()));
  }
  if (response->status == 429 || response->status >= 500) {
    throw UpstreamError("providers", "HTTP " + std::to_string(response->status) +
                                         " from " + config.url);
  }
  if (response->status >= 400) {
    throw PermanentUpstreamError("providers", "HTTP " + std::to_string(response->status) +
                                                  " from " + config.url + ": " +
                                                  response->body.substr(0, 200));
  }
  return response->body;
}

}  // namespace

std::string chat_request_body(const std::string& model,
                              const std::vector<ChatMessage>& messages) {
  json body;
  body["model"] = model;
  body["temperature"] = 0;
  body["messages"] = json::array();
  for (const auto& m : messages) {
    body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  }
  return body.dump();
}

std::string parse_chat_response(const std::string& body) {
  try {
    const json doc = json::parse(body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw UpstreamError("providers", std::string("malformed chat response: ") + e.what());
  }
}

std::string embedding_request_body(const std::string& model,
                                   const std::vector<std::string>& texts) {
  json body;
  body["model"] = model;
  body["input"] = texts;
  return body.dump();
}

std::vector<Embedding> parse_embedding_response(const std::string& body,
                                                std::size_t expected) {
  std::vector<Embedding> out(expected);
  std::vector<bool> seen(expected, false);
  try {
    const json doc = json::parse(body);
    const auto& data = doc.at("data");
    for (std::size_t pos = 0; pos < data.size(); ++pos) {
      const auto& item = data.at(pos);
      const std::size_t index = item.contains("index") ? item.at("index").get<std::size_t>() : pos;
      if (index >= expected || seen[index]) {
        throw UpstreamError("providers", "embedding response has bad index " +
                                             std::to_string(index));
      }
      out[index] = item.at("embedding").get<Embedding>();
      normalize_in_place(out[index]);
      seen[index] = true;
    }
  } catch (const json::exception& e) {
    throw UpstreamError("providers", std::string("malformed embedding response: ") + e.what());
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw UpstreamError("providers", "embedding response is missing items");
  }
  const std::size_t dim = expected ? out.front().size() : 0;
  for (const auto& v : out) {
    if (v.size() != dim) throw UpstreamError("providers", "embedding dimensions differ");
  }
  return out;
}

OpenAiChatClient::OpenAiChatClient(EndpointConfig config) : config_(std::move(config)) {}

std::string OpenAiChatClient::complete(const std::vector<ChatMessage>& messages) {
  const std::string body = chat_request_body(config_.model, messages);
  return call_with_retry(
      config_.retry,
      [&] { return parse_chat_response(post_json(config_, body)); },
      "chat completion");
}

OpenAiEmbeddingClient::OpenAiEmbeddingClient(EndpointConfig config)
    : config_(std::move(config)) {}

std::vector<Embedding> OpenAiEmbeddingClient::embed(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  const std::size_t batch = std::max<std::size_t>(1, config_.max_batch);
  for (std::size_t start = 0; start < texts.size(); start += batch) {
    const std::vector<std::string> chunk(
        texts.begin() + static_cast<std::ptrdiff_t>(start),
        texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), start + batch)));
    const std::string body = embedding_request_body(config_.model, chunk);
    std::vector<Embedding> vectors;
    try {
      call_with_retry(
          config_.retry,
          [&] {
            vectors = parse_embedding_response(post_json(config_, body), chunk.size());
            return std::string();
          },
          "embedding request");
    } catch (const UpstreamError& e) {
      throw UpstreamError("providers", e.what(), start);
    }
    for (auto& v : vectors) out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------

HashingEmbedder::HashingEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw ValidationError("providers", "embedding dimension must be positive");
}

std::vector<Embedding> HashingEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  std::vector<std::string> storage;
  for (const auto& text : texts) {
    Embedding v(dim_, 0.0f);
    for (std::string_view token : tokenize(text, storage)) {
      const std::uint64_t h = xxh64(token, seed_);
      v[h % dim_] += (h >> 63) ? -1.0f : 1.0f;
    }
    normalize_in_place(v);
    out.push_back(std::move(v));
  }
  return out;
}

TableEmbedder::TableEmbedder(std::map<std::string, Embedding> table) : table_(std::move(table)) {
  for (auto& [text, v] : table_) normalize_in_place(v);
}

std::vector<Embedding> TableEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    const auto it = table_.find(text);
    if (it == table_.end()) {
      throw UpstreamError("providers", "no embedding for \"" + text + "\"", out.size());
    }
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

KeywordChatProvider::KeywordChatProvider(std::vector<Rule> rules) : rules_(std::move(rules)) {
  for (auto& rule : rules_) rule.keyword = detail::to_lower_ascii(rule.keyword);
}

namespace {

bool is_word_char(char ch) {
  return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
         static_cast<unsigned char>(ch) >= 0x80;
}

bool contains_word(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

}  // namespace

std::string KeywordChatProvider::complete(const std::vector<ChatMessage>& messages) {
  std::string text;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == "user") {
      text = detail::to_lower_ascii(it->content);
      break;
    }
  }
  std::vector<std::string> tags;
  for (const auto& rule : rules_) {
    if (contains_word(text, rule.keyword) &&
        std::find(tags.begin(), tags.end(), rule.tag) == tags.end()) {
      tags.push_back(rule.tag);
    }
  }
  return json(tags).dump();
}

KeywordChatProvider KeywordChatProvider::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("providers", "cannot open keyword rules " + path);
  std::vector<Rule> rules;
  std::string line;
  std::size_t line_no = 0;
  while (detail::next_data_line(in, line, line_no)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError("providers", path + ":" + std::to_string(line_no) +
                                             ": expected keyword<TAB>tag");
    }
    rules.push_back({detail::trim(line.substr(0, tab)), detail::trim(line.substr(tab + 1))});
  }
  return KeywordChatProvider(std::move(rules));
}

}  // namespace instopt
