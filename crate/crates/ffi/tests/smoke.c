#include <stdio.h>
#include <string.h>
#include "ltlab.h"

#define CHECK(call)                                                         \
    do {                                                                    \
        LtStatus s_ = (call);                                               \
        if (s_ != LT_STATUS_OK) {                                           \
            fprintf(stderr, "%s: %d %s\n", #call, s_, ltlab_last_error_message()); \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    LtNetwork *net = NULL;
    LtMask *mask = NULL;
    size_t layers = 0, size = 0;
    CHECK(ltlab_network_new("fc", 42, &net));
    CHECK(ltlab_network_num_layers(net, &layers));
    if (layers != 3) return 2;
    CHECK(ltlab_mask_one_shot(net, net, "large_init", 0.2, 0, &mask));
    CHECK(ltlab_pack_encode("fc", 42, "init", mask, NULL, 0, &size));
    unsigned char buf[40000];
    if (size > sizeof buf) return 3;
    CHECK(ltlab_pack_encode("fc", 42, "init", mask, buf, sizeof buf, &size));
    LtNetwork *net2 = NULL;
    LtMask *mask2 = NULL;
    CHECK(ltlab_pack_decode(buf, size, &net2, &mask2));
    double frac = 0.0;
    CHECK(ltlab_mask_remaining_fraction(mask2, &frac));
    if (ltlab_network_new("nope", 0, &net) != LT_STATUS_INVALID_ARGUMENT) return 4;
    if (strlen(ltlab_last_error_message()) == 0) return 5;
    printf("%zu %.3f\n", size, frac);
    ltlab_mask_free(mask2);
    ltlab_network_free(net2);
    ltlab_mask_free(mask);
    return 0;
}
