#include <httplib.h>

#include <nlohmann/json.hpp>
#include <regex>

#include "talecraft/common/error.hpp"
#include "talecraft/s2p/story_to_prompt.hpp"

namespace talecraft::s2p {

namespace {

struct Endpoint {
    std::string base;  // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) {
        throw ConfigError("invalid s2p endpoint: " + url);
    }
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace

RemoteClient::RemoteClient(RemoteClientOptions options) : options_(std::move(options)) {
    split_endpoint(options_.endpoint);
}

std::string RemoteClient::complete(const std::string& instruction) {
    const auto endpoint = split_endpoint(options_.endpoint);
    httplib::Client client(endpoint.base);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    client.set_write_timeout(options_.timeout);

    httplib::Headers headers;
    if (!options_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + options_.api_key);
    }

    nlohmann::json body;
    if (options_.protocol == RemoteProtocol::simple) {
        body = {{"instruction", instruction}};
    } else {
        body = {{"model", options_.model},
                {"messages", nlohmann::json::array({{{"role", "user"}, {"content", instruction}}})}};
    }

    auto res = client.Post(endpoint.path, headers, body.dump(), "application/json");
    if (!res) {
        throw TransportError("no response from " + options_.endpoint + ": " + httplib::to_string(res.error()), 1);
    }
    if (res->status != 200) {
        throw TransportError("language model endpoint returned HTTP " + std::to_string(res->status), 1);
    }

    nlohmann::json reply;
    try {
        reply = nlohmann::json::parse(res->body);
        if (options_.protocol == RemoteProtocol::simple) {
            return reply.at("text").get<std::string>();
        }
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed language model response: ") + e.what(), res->body);
    }
}

}  // namespace talecraft::s2p
