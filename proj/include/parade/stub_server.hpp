#pragma once

#include <memory>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "parade/backend.hpp"

namespace parade {

/// Mounts the backend wire protocol on an httplib server, answering with any
/// in-process Backend. Useful for exercising HttpBackend end to end.
inline void mount_backend_routes(httplib::Server& server, std::shared_ptr<Backend> backend)
{
    auto handle = [](auto&& fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception& e) {
                res.status = 400;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
                return;
            }
            try {
                res.set_content(fn(body).dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 400;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            }
        };
    };
    server.Post("/v1/score", handle([backend](const nlohmann::json& b) {
                    auto lp = backend->score_continuation(b.at("context").get<std::string>(),
                                                          b.at("continuation").get<std::string>());
                    return nlohmann::json{{"tokens", lp.tokens}, {"logprobs", lp.logprobs}};
                }));
    server.Post("/v1/generate", handle([backend](const nlohmann::json& b) {
                    return nlohmann::json{{"text", backend->generate_greedy(b.at("prompt").get<std::string>(),
                                                                            b.at("max_tokens").get<int>())}};
                }));
    server.Post("/v1/embed", handle([backend](const nlohmann::json& b) {
                    return nlohmann::json{{"vector", backend->embed(b.at("text").get<std::string>())}};
                }));
}

} // namespace parade
