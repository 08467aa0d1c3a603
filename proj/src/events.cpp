#include "eventmatch/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string_view>
#include <thread>

#include "eventmatch/io.hpp"
#include "eventmatch/parallel.hpp"

namespace eventmatch {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t j = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > j) out.push_back(line.substr(j, i - j));
  }
  return out;
}

template <typename U>
U parse_number(std::string_view tok, std::size_t line, const char* what) {
  U value{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw ParseError("bad " + std::string(what) + " '" + std::string(tok) + "'", line);
  return value;
}

std::int8_t normalize_polarity(long long p, std::size_t location) {
  if (p == 1) return 1;
  if (p == 0 || p == -1) return -1;
  throw ParseError("polarity must be -1, 0 or 1, got " + std::to_string(p), location);
}

void check_event(const EventStream& s, const Event& e, std::size_t location) {
  if (e.x >= s.width || e.y >= s.height)
    throw BoundsError("event at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                      ") outside " + std::to_string(s.width) + "x" + std::to_string(s.height) +
                      " sensor (at " + std::to_string(location) + ")");
  if (e.t < s.t_start || e.t > s.t_end)
    throw BoundsError("event time " + std::to_string(e.t) + " outside window [" +
                      std::to_string(s.t_start) + ", " + std::to_string(s.t_end) + "] (at " +
                      std::to_string(location) + ")");
}

void finish(EventStream& s) {
  auto by_time = [](const Event& a, const Event& b) { return a.t < b.t; };
  if (!std::is_sorted(s.events.begin(), s.events.end(), by_time)) {
    std::stable_sort(s.events.begin(), s.events.end(), by_time);
    s.was_unsorted = true;
  }
}

EventStream parse_text(std::string_view text) {
  EventStream s;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    const auto tok = split_ws(line);
    if (!have_header) {
      if (tok.size() != 7 || tok[0] != "#" || tok[1] != "evt" || tok[2] != "v1")
        throw FormatError("missing '# evt v1 <width> <height> <t_start> <t_end>' header");
      s.width = parse_number<std::uint32_t>(tok[3], line_no, "width");
      s.height = parse_number<std::uint32_t>(tok[4], line_no, "height");
      s.t_start = parse_number<std::uint64_t>(tok[5], line_no, "t_start");
      s.t_end = parse_number<std::uint64_t>(tok[6], line_no, "t_end");
      if (s.width == 0 || s.height == 0) throw ParseError("sensor extent must be positive", line_no);
      if (s.t_end < s.t_start) throw ParseError("t_end precedes t_start", line_no);
      have_header = true;
      continue;
    }
    if (tok.empty() || tok[0].front() == '#') continue;
    if (tok.size() != 4) throw ParseError("expected '<t> <x> <y> <p>'", line_no);
    Event e;
    e.t = parse_number<std::uint64_t>(tok[0], line_no, "timestamp");
    const auto x = parse_number<std::uint32_t>(tok[1], line_no, "x");
    const auto y = parse_number<std::uint32_t>(tok[2], line_no, "y");
    if (x >= s.width || y >= s.height || x > 0xFFFF || y > 0xFFFF)
      throw BoundsError("event at (" + std::to_string(x) + "," + std::to_string(y) + ") outside " +
                        std::to_string(s.width) + "x" + std::to_string(s.height) +
                        " sensor (at " + std::to_string(line_no) + ")");
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.p = normalize_polarity(parse_number<long long>(tok[3], line_no, "polarity"), line_no);
    check_event(s, e, line_no);
    s.events.push_back(e);
  }
  if (!have_header) throw FormatError("empty event file");
  finish(s);
  return s;
}

EventStream parse_binary(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || r.get_string(4) != "EVT1") throw FormatError("bad event magic (expected EVT1)");
  EventStream s;
  s.width = r.get<std::uint32_t>();
  s.height = r.get<std::uint32_t>();
  s.t_start = r.get<std::uint64_t>();
  s.t_end = r.get<std::uint64_t>();
  const auto count = r.get<std::uint64_t>();
  if (s.width == 0 || s.height == 0) throw ParseError("sensor extent must be positive", 4);
  if (s.t_end < s.t_start) throw ParseError("t_end precedes t_start", 12);
  if (r.remaining() / kBinaryEventRecordSize < count)
    throw ParseError("truncated event payload: header promises " + std::to_string(count) +
                         " records",
                     r.offset());
  s.events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    Event e;
    e.t = r.get<std::uint64_t>();
    e.x = r.get<std::uint16_t>();
    e.y = r.get<std::uint16_t>();
    e.p = normalize_polarity(r.get<std::int8_t>(), at);
    check_event(s, e, at);
    s.events.push_back(e);
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after event records", r.offset());
  finish(s);
  return s;
}

}  // namespace

void EventStream::validate() const {
  if (width == 0 || height == 0) throw DomainError("sensor extent must be positive");
  if (t_end < t_start) throw DomainError("t_end precedes t_start");
  for (std::size_t i = 0; i < events.size(); ++i) {
    check_event(*this, events[i], i);
    if (events[i].p != 1 && events[i].p != -1) throw DomainError("polarity must be +-1");
    if (i > 0 && events[i].t < events[i - 1].t) throw DomainError("events are not time ordered");
  }
}

EventFormat detect_event_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) == "EVT1")
    return EventFormat::Binary;
  return EventFormat::Text;
}

EventStream parse_events(std::span<const std::uint8_t> bytes, EventFormat format) {
  if (format == EventFormat::Binary) return parse_binary(bytes);
  return parse_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Bytes write_events(const EventStream& stream, EventFormat format) {
  Bytes out;
  if (format == EventFormat::Binary) {
    out.reserve(kBinaryEventHeaderSize + kBinaryEventRecordSize * stream.events.size());
    ByteWriter w(out);
    w.put_bytes("EVT1");
    w.put<std::uint32_t>(stream.width);
    w.put<std::uint32_t>(stream.height);
    w.put<std::uint64_t>(stream.t_start);
    w.put<std::uint64_t>(stream.t_end);
    w.put<std::uint64_t>(stream.events.size());
    for (const auto& e : stream.events) {
      w.put<std::uint64_t>(e.t);
      w.put<std::uint16_t>(e.x);
      w.put<std::uint16_t>(e.y);
      w.put<std::int8_t>(e.p);
    }
    return out;
  }
  std::ostringstream os;
  os << "# evt v1 " << stream.width << ' ' << stream.height << ' ' << stream.t_start << ' '
     << stream.t_end << '\n';
  for (const auto& e : stream.events)
    os << e.t << ' ' << e.x << ' ' << e.y << ' ' << static_cast<int>(e.p) << '\n';
  const std::string s = os.str();
  return Bytes(s.begin(), s.end());
}

std::vector<NormalizedEvent> normalize_timestamps(const EventStream& stream, std::size_t bins) {
  if (stream.t_end <= stream.t_start) throw DomainError("empty time window (t_end <= t_start)");
  if (bins < 2) throw DomainError("at least two temporal bins are required");
  const double span = static_cast<double>(stream.t_end - stream.t_start);
  const double top = static_cast<double>(bins - 1);
  std::vector<NormalizedEvent> out;
  out.reserve(stream.events.size());
  for (const auto& e : stream.events) {
    const double t_norm = static_cast<double>(e.t - stream.t_start) / span * top;
    out.push_back({e.x, e.y, t_norm, static_cast<double>(std::abs(e.p))});
  }
  return out;
}

namespace {

void deposit(std::vector<double>& grid, std::size_t width, std::size_t bins,
             const NormalizedEvent& e) {
  double* cell = grid.data() + (static_cast<std::size_t>(e.y) * width + e.x) * bins;
  const double lower = std::floor(e.t_norm);
  const auto b = static_cast<std::size_t>(lower);
  const double frac = e.t_norm - lower;
  if (b < bins) cell[b] += e.weight * (1.0 - frac);
  if (frac > 0.0 && b + 1 < bins) cell[b + 1] += e.weight * frac;
}

}  // namespace

VoxelGrid build_voxel_grid(const EventStream& stream, std::size_t bins) {
  const auto normalized = normalize_timestamps(stream, bins);
  const std::size_t w = stream.width, h = stream.height;
  const std::size_t cells = w * h * bins;

  const std::size_t parts =
      std::max<std::size_t>(1, std::min<std::size_t>(thread_count(), normalized.size() / 4096));
  std::vector<std::vector<double>> partial(parts, std::vector<double>(cells, 0.0));
  const std::size_t chunk = (normalized.size() + parts - 1) / std::max<std::size_t>(parts, 1);
  parallel_for(0, parts, [&](std::size_t p) {
    const std::size_t lo = p * chunk;
    const std::size_t hi = std::min(normalized.size(), lo + chunk);
    for (std::size_t i = lo; i < hi; ++i) deposit(partial[p], w, bins, normalized[i]);
  });
  for (std::size_t p = 1; p < parts; ++p)
    for (std::size_t i = 0; i < cells; ++i) partial[0][i] += partial[p][i];

  VoxelGrid v{Tensor({h, w, bins}), bins, w, h};
  for (std::size_t i = 0; i < cells; ++i) v.data[i] = static_cast<float>(partial[0][i]);
  return v;
}

double voxel_mass(const VoxelGrid& v) {
  double sum = 0.0;
  for (float x : v.data.values()) sum += x;
  return sum;
}

}  // namespace eventmatch
