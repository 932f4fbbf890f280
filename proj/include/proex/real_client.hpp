#pragma once

// HTTP-backed chat/embedding clients (OpenAI-style JSON API). Activated only
// when PROEX_LLM_ENDPOINT is set; tests never require network access.

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "proex/common.hpp"
#include "proex/profiles.hpp"

namespace proex {

struct LlmEndpoint {
    std::string base_url;  // e.g. http://host:port
    std::string api_key;
    std::string chat_model = "gpt-3.5-turbo";
    std::string embed_model = "text-embedding-ada-002";

    static bool configured() { return std::getenv("PROEX_LLM_ENDPOINT") != nullptr; }

    static LlmEndpoint from_env() {
        LlmEndpoint e;
        const char* url = std::getenv("PROEX_LLM_ENDPOINT");
        if (!url) throw Error("PROEX_LLM_ENDPOINT is not set");
        e.base_url = url;
        if (const char* key = std::getenv("PROEX_LLM_KEY")) e.api_key = key;
        return e;
    }
};

namespace detail {

inline nlohmann::json post_json(const LlmEndpoint& ep, const std::string& path,
                                const nlohmann::json& body) {
    httplib::Client cli(ep.base_url);
    cli.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!ep.api_key.empty()) headers.emplace("Authorization", "Bearer " + ep.api_key);
    const auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) throw Error("LLM endpoint unreachable: " + ep.base_url + path);
    if (res->status != 200)
        throw Error("LLM endpoint returned status " + std::to_string(res->status) + ": " +
                    res->body.substr(0, 200));
    return nlohmann::json::parse(res->body);
}

}  // namespace detail

class HttpChatClient : public ChatClient {
public:
    explicit HttpChatClient(LlmEndpoint ep) : ep_(std::move(ep)) {}

    std::string complete(const std::string& system_prompt,
                         const std::string& user_message) const override {
        const nlohmann::json body{{"model", ep_.chat_model},
                                  {"temperature", 0.0},
                                  {"messages",
                                   {{{"role", "system"}, {"content", system_prompt}},
                                    {{"role", "user"}, {"content", user_message}}}}};
        const auto r = detail::post_json(ep_, "/v1/chat/completions", body);
        return r.at("choices").at(0).at("message").at("content").get<std::string>();
    }

private:
    LlmEndpoint ep_;
};

class HttpTextEmbedder : public TextEmbedder {
public:
    HttpTextEmbedder(LlmEndpoint ep, std::size_t d_s) : ep_(std::move(ep)), d_s_(d_s) {}

    Vec embed(const std::string& text) const override {
        const nlohmann::json body{{"model", ep_.embed_model}, {"input", text}};
        const auto r = detail::post_json(ep_, "/v1/embeddings", body);
        Vec v = r.at("data").at(0).at("embedding").get<Vec>();
        if (v.size() != d_s_)
            throw FormatError("embedding endpoint returned dimension " +
                              std::to_string(v.size()) + ", expected " + std::to_string(d_s_));
        for (double& x : v) x = quantize9(x);
        return v;
    }

    std::size_t dim() const override { return d_s_; }

private:
    LlmEndpoint ep_;
    std::size_t d_s_;
};

}  // namespace proex
