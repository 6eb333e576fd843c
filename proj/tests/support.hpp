#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "parade/core.hpp"

namespace parade::testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
  public:
    TempDir()
    {
        std::random_device rd;
        m_path = fs::temp_directory_path() / ("parade-test-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(m_path);
    }
    ~TempDir()
    {
        std::error_code ec;
        fs::remove_all(m_path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return m_path; }
    fs::path operator/(const std::string& name) const { return m_path / name; }

  private:
    fs::path m_path;
};

inline void write_file(const fs::path& p, const std::string& text)
{
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct RunResult {
    int exit_code = -1;
    std::string output;
};

/// Runs a shell command, capturing stdout and stderr together.
inline RunResult run(const std::string& command, const fs::path& scratch)
{
    auto log = scratch / "command.log";
    int status = std::system((command + " > '" + log.string() + "' 2>&1").c_str());
    RunResult r;
    r.output = read_file(log);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

inline Demonstration demo(const std::string& qid, const std::string& query, const std::string& did,
                          const std::string& text)
{
    return Demonstration{Query(qid, query), Document(did, text), std::nullopt, std::nullopt};
}

} // namespace parade::testing
