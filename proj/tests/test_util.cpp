#include <doctest.h>

#include <atomic>
#include <filesystem>

#include "masca/util.hpp"

using namespace masca;

TEST_CASE("sha256 matches the published test vector") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("format helpers are locale independent") {
  CHECK(format_fixed(4.0, 4) == "4.0000");
  CHECK(format_fixed(0.0714285714, 7) == "0.0714286");
  CHECK(format_pct(0.6) == "60.00%");
  CHECK(format_pct(1.0) == "100.00%");
}

TEST_CASE("string helpers") {
  CHECK(to_lower("Final DECISION") == "final decision");
  CHECK(trim("  x \n") == "x");
  CHECK(split("a,b,,c", ',') == std::vector<std::string>{"a", "b", "", "c"});
}

TEST_CASE("atomic write replaces content without partial states") {
  const auto dir = std::filesystem::temp_directory_path() / "masca_util_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "file.txt";
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  CHECK(read_file(path) == "second");
  std::filesystem::remove_all(dir);
}

TEST_CASE("thread pool runs every submitted job") {
  ThreadPool pool(4);
  std::atomic<int> count{0};
  for (int i = 0; i < 100; ++i) {
    pool.submit([&count] { ++count; });
  }
  pool.wait_idle();
  CHECK(count == 100);
}
