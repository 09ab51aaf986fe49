#include "httplib.h"

#include "drugrec/http.hpp"

namespace drugrec {

namespace {

// Splits "scheme://host[:port]/path?query" into client base and request path.
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw HttpError("URL has no scheme: " + url, 0);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

std::string http_post_json(const std::string& url, const std::string& body, const std::string& api_key,
                           std::chrono::milliseconds timeout) {
    const auto [base, path] = split_url(url);
    httplib::Client client(base);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + api_key);
    }
    const auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
        throw HttpError("POST " + url + " failed: " + httplib::to_string(res.error()), 0);
    }
    if (res->status < 200 || res->status >= 300) {
        throw HttpError("POST " + url + " returned HTTP " + std::to_string(res->status), res->status);
    }
    return res->body;
}

} // namespace drugrec
