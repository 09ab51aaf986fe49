#pragma once

#include <chrono>
#include <string>
#include <thread>
#include <type_traits>

#include "drugrec/error.hpp"

namespace drugrec {

class HttpError : public Error {
public:
    HttpError(const std::string& what, int status) : Error(what), status_(status) {}
    /// HTTP status, or 0 when no response arrived.
    int status() const { return status_; }

private:
    int status_;
};

/// POSTs a JSON body to `url` (http:// or https://) and returns the response
/// body. A non-empty `api_key` is sent as a bearer token. Throws HttpError on
/// transport failure or a non-2xx status.
std::string http_post_json(const std::string& url, const std::string& body, const std::string& api_key,
                           std::chrono::milliseconds timeout = std::chrono::seconds(60));

struct RetryPolicy {
    int retries = 2;
    std::chrono::milliseconds initial_backoff{250};
    double multiplier = 2.0;
};

/// Calls `fn`; on drugrec::Error waits and retries up to `policy.retries`
/// times with exponential backoff, then rethrows the last error.
template <class F>
std::invoke_result_t<F> with_retries(const RetryPolicy& policy, F&& fn) {
    auto wait = policy.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        try {
            return fn();
        } catch (const Error&) {
            if (attempt >= policy.retries) {
                throw;
            }
        }
        if (wait.count() > 0) {
            std::this_thread::sleep_for(wait);
        }
        wait = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(wait.count()) * policy.multiplier));
    }
}

} // namespace drugrec
