#pragma once

#include <cstdint>
#include <vector>

namespace rfrec {

enum class Direction { client_to_server, server_to_client };

// One communication round: a directed transfer counted once regardless of
// cohort size. participants records how many clients took part (0 means the
// round happened against an empty cohort, e.g. full dropout).
struct CommEvent {
    long long iter;
    Direction dir;
    int participants;
    int d;
    int m;
};

struct CommLog {
    std::vector<CommEvent> events;
    std::vector<std::uint8_t> zeta_seq;  // RFRecF branch draws, one per iteration
    long long skipped_aggregations = 0;  // aggregations with an empty cohort

    long long rounds() const { return static_cast<long long>(events.size()); }

    long long messages() const {
        long long total = 0;
        for (const auto& e : events) total += e.participants;
        return total;
    }

    long long bytes() const {
        long long total = 0;
        for (const auto& e : events)
            total += static_cast<long long>(e.participants) * e.d * e.m * 8;
        return total;
    }

    // number of indices k with zeta_{k-1} != zeta_k (zeta_{-1} taken as 0);
    // must equal rounds() for an RFRecF log
    long long zeta_transitions() const {
        long long count = 0;
        std::uint8_t prev = 0;
        for (std::uint8_t z : zeta_seq) {
            if (z != prev) ++count;
            prev = z;
        }
        return count;
    }
};

}  // namespace rfrec
