# call: outer(2)
def sq(v):
    return v * v

def outer(a):
    b = sq(a)
    return b + 1
