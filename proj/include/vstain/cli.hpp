#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace vstain::cli {

enum ExitCode : int {
    ok = 0,
    partial = 1,  // some inputs skipped, run stopped early, or a runtime failure
    usage = 2,
    integrity = 3,
};

/// Entry point for the `vstain` binary; verbs gen-data, train, sample, eval,
/// seg-coarse and verify.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Exclusive O_EXCL lock file inside a directory; released on destruction.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::filesystem::path path_;
};

/// Writes via a sibling temporary and rename.
void write_atomic(const std::filesystem::path& path, const std::string& content);

std::string source_revision();

}  // namespace vstain::cli
