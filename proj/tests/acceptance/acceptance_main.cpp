#include <cstring>
#include <string>
#include <thread>

#include "acceptance_properties.hpp"
#include "acceptance_trends.hpp"

int main(int argc, char** argv) {
    std::string only;
    std::string work_dir = "acceptance";
    std::string configs_dir = "configs";
    int workers = (int)std::max(1u, std::thread::hardware_concurrency());
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        auto next = [&]() -> std::string { return i + 1 < argc ? argv[++i] : ""; };
        if (arg == "--only") only = next();
        else if (arg == "--work-dir") work_dir = next();
        else if (arg == "--configs") configs_dir = next();
        else if (arg == "--workers") workers = std::stoi(next());
        else {
            std::printf("usage: %s [--only properties|trends] [--work-dir D] [--configs D] "
                        "[--workers N]\n", argv[0]);
            return 2;
        }
    }

    acceptance::Gate gate;
    if (only.empty() || only == "properties") acceptance::run_property_criteria(gate);
    if (only.empty() || only == "trends")
        acceptance::run_trend_criteria(gate, work_dir, configs_dir, workers);
    std::printf("acceptance: %d passed, %d failed\n", gate.passed, gate.failed);
    return gate.exit_code();
}
