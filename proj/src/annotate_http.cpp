#include "evsae/events.hpp"

#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace evsae {

using nlohmann::json;

namespace {

// splits "http://host:port/path" into (scheme://host:port, /path)
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw AnnotatorUnavailable("annotator endpoint must include a scheme: " + endpoint);
    const auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

}  // namespace

HttpAnnotator::HttpAnnotator() {
    const char* endpoint = std::getenv("EVSAE_ANNOTATOR_ENDPOINT");
    if (!endpoint || !*endpoint)
        throw AnnotatorUnavailable("EVSAE_ANNOTATOR_ENDPOINT is not set");
    endpoint_ = endpoint;
    if (const char* key = std::getenv("EVSAE_ANNOTATOR_KEY")) api_key_ = key;
}

HttpAnnotator::HttpAnnotator(std::string endpoint, std::string api_key)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)) {}

Annotation HttpAnnotator::annotate(const std::string& prompt, const std::vector<ClipMeta>& clips) {
    const auto [base, path] = split_endpoint(endpoint_);

    json body;
    body["prompt"] = prompt;
    body["clips"] = json::array();
    for (const auto& c : clips)
        body["clips"].push_back({{"episode_id", c.episode_id},
                                 {"timestep", c.t_i},
                                 {"n_frames", c.n_frames}});
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt < 3; ++attempt) {
        httplib::Client client(base);
        client.set_connection_timeout(5, 0);
        client.set_read_timeout(30, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = "connection failed (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        return parse_annotation(res->body);  // MalformedAnnotation is not retried
    }
    throw AnnotatorUnavailable("annotator unreachable after 3 attempts: " + last_error);
}

}  // namespace evsae
