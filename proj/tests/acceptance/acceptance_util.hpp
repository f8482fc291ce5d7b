#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

namespace acceptance {

struct Gate {
    int passed = 0, failed = 0;

    void check(const std::string& name, bool ok, const std::string& detail = "") {
        std::printf("%s %s%s%s\n", ok ? "PASS" : "FAIL", name.c_str(),
                    detail.empty() ? "" : " -- ", detail.c_str());
        std::fflush(stdout);
        ok ? ++passed : ++failed;
    }

    /// Runs a criterion body; an exception is a failure, not an abort.
    void criterion(const std::string& name, const std::function<bool(std::string&)>& body) {
        std::string detail;
        bool ok = false;
        try {
            ok = body(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        check(name, ok, detail);
    }

    int exit_code() const { return failed == 0 ? 0 : 1; }
};

std::string fmt(double v);

} // namespace acceptance
