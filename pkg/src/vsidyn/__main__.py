from .iocli import main

main()
