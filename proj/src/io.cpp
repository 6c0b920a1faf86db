#include "feel/io.hpp"
#include "feel/error.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace feel {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, fmt::format("cannot read '{}'", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::io, fmt::format("cannot write '{}'", path.string()));
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) fail(ErrorKind::io, fmt::format("short write to '{}'", path.string()));
    }
    fs::rename(tmp, path);
}

void append_line(const fs::path& path, std::string_view line) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) fail(ErrorKind::io, fmt::format("cannot append to '{}'", path.string()));
    out << line << '\n';
    out.flush();
}

void for_each_jsonl(const fs::path& path,
                    const std::function<void(std::size_t, const json&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, fmt::format("cannot read '{}'", path.string()));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json value;
        try {
            value = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(ErrorKind::parse,
                 fmt::format("{}:{}: invalid JSON: {}", path.string(), line_no, e.what()));
        }
        fn(line_no, value);
    }
}

std::string dump_compact(const json& value) {
    return value.dump(-1, ' ', false, json::error_handler_t::strict);
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        fail(ErrorKind::io, "sha256 digest failed");
    }
    std::string hex;
    hex.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(text.substr(start));
            break;
        }
        parts.emplace_back(text.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

std::string_view trim(std::string_view text) {
    const auto is_space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
    while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
    return text;
}

}  // namespace feel
