#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <semaphore>
#include <thread>

#include <nlohmann/json.hpp>

#include "cascade/backends.hpp"
#include "cascade/error.hpp"
#include "cascade/util.hpp"

namespace cascade {

using nlohmann::json;

namespace {

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string trim_lower(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    std::string out(s.substr(b, e - b + 1));
    std::transform(out.begin(), out.end(), out.begin(), lower);
    return out;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
}

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Endpoint split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorKind::InvalidConfig, "endpoint url lacks a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

// Label logprobs at the first token position where any label shows up among
// the sampled token or its alternatives.
std::optional<std::vector<double>> label_probs_from_logprobs(const json& choice, const LabelSpace& labels) {
    auto lp = choice.find("logprobs");
    if (lp == choice.end() || !lp->is_object()) return std::nullopt;
    auto content = lp->find("content");
    if (content == lp->end() || !content->is_array()) return std::nullopt;

    const std::size_t k = labels.size();
    for (const auto& position : *content) {
        std::vector<std::optional<double>> found(k);
        auto consider = [&](const json& entry) {
            if (!entry.is_object() || !entry.contains("token") || !entry.contains("logprob")) return;
            if (!entry["token"].is_string() || !entry["logprob"].is_number()) return;
            const auto tok = trim_lower(entry["token"].get<std::string>());
            const double value = entry["logprob"].get<double>();
            if (!std::isfinite(value)) return;
            for (std::size_t c = 0; c < k; ++c) {
                if (trim_lower(labels.label(c)) == tok && (!found[c] || *found[c] < value)) found[c] = value;
            }
        };
        consider(position);
        if (auto top = position.find("top_logprobs"); top != position.end() && top->is_array()) {
            for (const auto& alt : *top) consider(alt);
        }
        double m = -INFINITY;
        for (const auto& f : found) {
            if (f) m = std::max(m, *f);
        }
        if (!std::isfinite(m)) continue;
        std::vector<double> probs(k, 0.0);
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (found[c]) {
                probs[c] = std::exp(*found[c] - m);
                sum += probs[c];
            }
        }
        for (double& p : probs) p /= sum;
        return probs;
    }
    return std::nullopt;
}

}  // namespace

std::optional<LabelIndex> match_label(std::string_view text, const LabelSpace& labels) {
    std::string hay(text);
    std::transform(hay.begin(), hay.end(), hay.begin(), lower);
    std::vector<std::string> needles;
    for (const auto& l : labels.labels()) needles.push_back(trim_lower(l));

    for (std::size_t pos = 0; pos < hay.size(); ++pos) {
        if (pos > 0 && word_char(hay[pos - 1]) && word_char(hay[pos])) continue;
        std::optional<LabelIndex> best;
        for (std::size_t c = 0; c < needles.size(); ++c) {
            const auto& n = needles[c];
            if (n.empty() || hay.compare(pos, n.size(), n) != 0) continue;
            const std::size_t end = pos + n.size();
            if (end < hay.size() && word_char(hay[end]) && word_char(n.back())) continue;
            if (!best || n.size() > needles[*best].size()) best = c;
        }
        if (best) return best;
    }
    return std::nullopt;
}

PredictionRecord parse_chat_response(std::string_view backend_id, std::string_view example_id, std::string_view body,
                                     const LabelSpace& labels) {
    auto fail = [&](const std::string& why) {
        throw Error(ErrorKind::ParseFailure, why + "; raw response: " + std::string(body));
    };
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error&) {
        fail("response is not JSON");
    }
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        fail("response has no choices");
    }
    const json& choice = j["choices"][0];
    if (auto probs = label_probs_from_logprobs(choice, labels)) {
        return PredictionRecord::from_probs(std::string(backend_id), std::string(example_id), std::move(*probs));
    }
    const json* content = nullptr;
    if (choice.contains("message") && choice["message"].is_object() && choice["message"].contains("content")) {
        content = &choice["message"]["content"];
    }
    if (!content || !content->is_string()) fail("choice has no text content");
    auto idx = match_label(content->get<std::string>(), labels);
    if (!idx) fail("no label found in answer");
    std::vector<double> probs(labels.size(), 0.0);
    probs[*idx] = 1.0;
    return PredictionRecord::from_probs(std::string(backend_id), std::string(example_id), std::move(probs));
}

struct HttpBackend::Impl {
    explicit Impl(int slots) : in_flight(slots) {}
    std::counting_semaphore<> in_flight;
    std::atomic<std::uint64_t> calls{0};
};

HttpBackend::HttpBackend(BackendDescriptor desc, LabelSpace labels) : Backend(std::move(desc)), labels_(std::move(labels)) {
    const auto& cfg = std::get<HttpConfig>(desc_.config);
    if (cfg.max_in_flight < 1) throw Error(ErrorKind::InvalidConfig, "max_in_flight must be >= 1");
    if (cfg.attempts < 1) throw Error(ErrorKind::InvalidConfig, "attempts must be >= 1");
    split_url(cfg.url);
    desc_.opaque_confidence = !cfg.logprobs;
    impl_ = std::make_unique<Impl>(cfg.max_in_flight);
}

HttpBackend::~HttpBackend() = default;

int HttpBackend::capacity() const noexcept { return std::get<HttpConfig>(desc_.config).max_in_flight; }

std::uint64_t HttpBackend::network_calls() const noexcept { return impl_->calls.load(); }

std::string HttpBackend::render_prompt(const LabeledExample& example) const {
    const auto& cfg = std::get<HttpConfig>(desc_.config);
    std::string labels;
    for (const auto& l : labels_.labels()) {
        if (!labels.empty()) labels += ", ";
        labels += l;
    }
    std::string prompt = cfg.prompt_template;
    replace_all(prompt, "{labels}", labels);
    replace_all(prompt, "{input}", example.payload);
    return prompt;
}

std::string HttpBackend::cache_key(const std::string& prompt) const {
    const auto& cfg = std::get<HttpConfig>(desc_.config);
    return sha256_hex(cfg.url + '\n' + cfg.model + '\n' + prompt);
}

PredictionRecord HttpBackend::predict(const LabeledExample& example) const {
    const auto& cfg = std::get<HttpConfig>(desc_.config);
    const std::string prompt = render_prompt(example);
    const auto cache_path = cfg.cache_dir.empty() ? std::filesystem::path{}
                                                  : cfg.cache_dir / (cache_key(prompt) + ".json");
    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
        return parse_chat_response(desc_.id, example.id, read_file(cache_path), labels_);
    }

    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw Error(ErrorKind::AuthMissing, "environment variable " + cfg.api_key_env + " is not set");
    }

    json body = {{"model", cfg.model},
                 {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                 {"max_tokens", cfg.max_tokens}};
    if (cfg.logprobs) {
        body["logprobs"] = true;
        body["top_logprobs"] = std::min<std::size_t>(20, labels_.size());
    }
    const std::string payload = body.dump();
    const Endpoint ep = split_url(cfg.url);
    const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

    impl_->in_flight.acquire();
    struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
    } release{impl_->in_flight};

    int last_status = 0;
    std::string last_error;
    for (int attempt = 0; attempt < cfg.attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(cfg.backoff_base_ms) * (1 << (attempt - 1)));
        }
        httplib::Client client(ep.origin);
        client.set_connection_timeout(cfg.timeout_s, 0);
        client.set_read_timeout(cfg.timeout_s, 0);
        ++impl_->calls;
        auto res = client.Post(ep.path, headers, payload, "application/json");
        if (!res) {
            last_status = 0;
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            auto rec = parse_chat_response(desc_.id, example.id, res->body, labels_);
            if (!cache_path.empty()) {
                // Write-then-rename keeps concurrent readers from seeing partial files.
                auto tmp = cache_path;
                tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
                write_file(tmp, res->body);
                std::filesystem::rename(tmp, cache_path);
            }
            return rec;
        }
        last_status = res->status;
        last_error = res->body;
        if (res->status != 429 && res->status < 500) break;
    }
    if (last_status != 0) {
        throw Error(ErrorKind::HttpStatus,
                    "backend '" + desc_.id + "' returned HTTP " + std::to_string(last_status) + ": " + last_error,
                    last_status);
    }
    throw Error(ErrorKind::BackendUnavailable, "backend '" + desc_.id + "' unreachable: " + last_error);
}

}  // namespace cascade
